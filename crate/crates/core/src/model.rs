//! Versioned JSON model file.
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so `write -> read -> write` is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::forest::Forest;
use crate::{Error, Result};

pub const FORMAT_NAME: &str = "co2forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub forest: Forest,
}

impl ModelFile {
    pub fn new(forest: Forest) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            forest,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != FORMAT_NAME {
            return Err(Error::Model(format!("unknown model format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let f = &self.forest;
        if f.trees.is_empty() {
            return Err(Error::Model("model has no trees".into()));
        }
        if f.labels.len() != f.k || f.preprocess.p_raw() != f.p_raw {
            return Err(Error::Model("inconsistent header fields".into()));
        }
        if let Some(w) = &f.class_weights {
            if w.len() != f.k {
                return Err(Error::Model("class weight length differs from k".into()));
            }
        }
        for t in &f.trees {
            if t.k != f.k || t.p != f.p_raw + 1 {
                return Err(Error::Model("tree dimensions differ from model".into()));
            }
            for (id, node) in t.nodes.iter().enumerate() {
                match node {
                    crate::tree::Node::Internal { w, left, right } => {
                        if w.len() != t.p
                            || *left <= id
                            || *right <= id
                            || *left >= t.nodes.len()
                            || *right >= t.nodes.len()
                        {
                            return Err(Error::Model(format!("malformed internal node {id}")));
                        }
                    }
                    crate::tree::Node::Leaf { theta } => {
                        if theta.len() != t.k {
                            return Err(Error::Model(format!("malformed leaf {id}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
