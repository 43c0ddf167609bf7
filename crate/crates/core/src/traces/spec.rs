//! Probe declarations: which features an algorithm exposes, where they live
//! (node, edge, graph) and how they are typed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Hint,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Node,
    Edge,
    Graph,
}

impl Location {
    /// Number of feature elements for a graph with `n` nodes.
    pub fn elements(self, n: usize) -> usize {
        match self {
            Location::Node => n,
            Location::Edge => n * n,
            Location::Graph => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureType {
    Scalar,
    Categorical,
    Mask,
    MaskOne,
    Pointer,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub stage: Stage,
    pub location: Location,
    #[serde(rename = "type")]
    pub kind: FeatureType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl FeatureSpec {
    pub fn new(name: &str, stage: Stage, location: Location, kind: FeatureType) -> Self {
        Self {
            name: name.to_string(),
            stage,
            location,
            kind,
            num_classes: None,
        }
    }

    pub fn categorical(name: &str, stage: Stage, location: Location, classes: usize) -> Self {
        Self {
            name: name.to_string(),
            stage,
            location,
            kind: FeatureType::Categorical,
            num_classes: Some(classes),
        }
    }

    /// Floats stored per element (class count for categoricals, else 1).
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureType::Categorical => self.num_classes.unwrap_or(0),
            _ => 1,
        }
    }

    /// Total stored values for a graph with `n` nodes.
    pub fn len(&self, n: usize) -> usize {
        self.location.elements(n) * self.width()
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.num_classes) {
            (FeatureType::Categorical, Some(c)) if c > 0 => {}
            (FeatureType::Categorical, _) => {
                return Err(Error::SchemaMismatch(format!(
                    "categorical `{}` needs a positive class count",
                    self.name
                )))
            }
            (_, Some(_)) => {
                return Err(Error::SchemaMismatch(format!(
                    "`{}` is not categorical but declares num_classes",
                    self.name
                )))
            }
            _ => {}
        }
        if matches!(self.kind, FeatureType::MaskOne | FeatureType::Pointer)
            && self.location == Location::Graph
        {
            return Err(Error::SchemaMismatch(format!(
                "`{}`: mask_one and pointer features cannot live on the graph",
                self.name
            )));
        }
        Ok(())
    }
}

/// Ordered list of probes for one algorithm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub Vec<FeatureSpec>);

impl Schema {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for spec in &specs {
            spec.validate()?;
            if !seen.insert((spec.name.clone(), spec.stage)) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate probe `{}` at stage {:?}",
                    spec.name, spec.stage
                )));
            }
        }
        Ok(Self(specs))
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.0
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &FeatureSpec> {
        self.0.iter().filter(move |s| s.stage == stage)
    }

    pub fn get(&self, name: &str, stage: Stage) -> Option<&FeatureSpec> {
        self.0.iter().find(|s| s.name == name && s.stage == stage)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.0).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_requires_classes() {
        let bad = FeatureSpec::new("c", Stage::Hint, Location::Node, FeatureType::Categorical);
        assert!(bad.validate().is_err());
        let mut extra = FeatureSpec::new("m", Stage::Hint, Location::Node, FeatureType::Mask);
        extra.num_classes = Some(3);
        assert!(extra.validate().is_err());
        assert!(FeatureSpec::categorical("c", Stage::Hint, Location::Graph, 3)
            .validate()
            .is_ok());
    }

    #[test]
    fn graph_pointer_rejected() {
        for kind in [FeatureType::Pointer, FeatureType::MaskOne] {
            let s = FeatureSpec::new("p", Stage::Output, Location::Graph, kind);
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn duplicate_name_stage_rejected() {
        let a = FeatureSpec::new("x", Stage::Hint, Location::Node, FeatureType::Mask);
        let b = FeatureSpec::new("x", Stage::Output, Location::Node, FeatureType::Mask);
        assert!(Schema::new(vec![a.clone(), b]).is_ok());
        assert!(Schema::new(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn serialized_type_field_is_named_type() {
        let s = FeatureSpec::new("pred_h", Stage::Hint, Location::Node, FeatureType::Pointer);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"name":"pred_h","stage":"hint","location":"node","type":"pointer"}"#
        );
    }
}
