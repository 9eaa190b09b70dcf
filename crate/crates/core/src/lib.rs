pub mod body_model;
pub mod pose_sequence;
pub mod metrics;
pub mod cloth_sim;
pub mod recover_net;
pub mod scene_gen;
