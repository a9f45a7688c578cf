pub mod dense;
pub mod oracles;
