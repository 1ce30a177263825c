pub mod acu;
pub mod agent;
pub mod autopilot;
pub mod geo;
pub mod links;
pub mod logger;
pub mod mavlink;
pub mod network;
pub mod radio;
pub mod scenario;
pub mod sim;
