pub mod machine;
pub mod message;
pub mod protocol;
pub mod bbspec;
pub mod refinement;
pub mod explore;
