pub mod cv_report;
pub mod eval;
pub mod gen_data;
pub mod sample;
pub mod schedule_dump;
pub mod spectrum;
pub mod sweep;
pub mod train;
