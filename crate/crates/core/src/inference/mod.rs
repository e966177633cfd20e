pub mod measurement;
pub mod mif;
pub mod params;
pub mod pfilter;
pub mod profile;
