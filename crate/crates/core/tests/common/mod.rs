pub mod checks;
pub mod fixture;
pub mod oracles;
