pub mod backends;
pub mod cluster;
pub mod model;
pub mod netvirt;
pub mod orchestrator;
pub mod storage;
