pub mod design;
pub mod diagnose;
pub mod evaluate;
pub mod fit;
pub mod simulate;
