#![allow(dead_code)]

use std::path::PathBuf;

use afspp_core::config::{World, WorldConfig};

pub fn presets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

pub fn cafe_world() -> World {
    WorldConfig::load(&presets().join("worlds/qunits_cafe.json")).unwrap().compile().unwrap()
}
