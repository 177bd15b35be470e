//! Trained policy files: a JSON document with a metadata header and the
//! `f32` parameters in row-major (`in × out`) order.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, LearnError, Mlp, Normalizer};
use crate::dataset::{Provenance, SubTaskSpec};
use crate::evaluator::Policy;
use crate::sim::{Observation, ACTION_DIM, OBSERVATION_DIM};

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub version: u32,
    pub dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub epochs: usize,
    pub dataset_fingerprint: String,
    pub config_fingerprint: String,
    pub provenance: Provenance,
    pub subtasks: Vec<SubTaskSpec>,
    /// Fingerprint of the scenario (environment, safety, camera) the
    /// demonstrations came from, when trained through the harness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Layer {
    weights: Vec<f32>,
    biases: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    header: ModelHeader,
    layers: Vec<Layer>,
}

/// A trained network plus everything needed to run it on raw observations.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    header: ModelHeader,
    net: Mlp<f32>,
}

impl PolicyModel {
    pub fn new(header: ModelHeader, net: Mlp<f32>) -> Result<Self, LearnError> {
        if header.dims != net.dims() {
            return Err(LearnError::Format(format!("header dims {:?} but network has {:?}", header.dims, net.dims())));
        }
        if header.hidden_activation != net.hidden_activation() || header.output_activation != net.output_activation() {
            return Err(LearnError::Format("header activations disagree with the network".into()));
        }
        header.normalizer.validate()?;
        Ok(Self { header, net })
    }

    pub fn header(&self) -> &ModelHeader {
        &self.header
    }

    pub fn set_scenario_fingerprint(&mut self, fingerprint: impl Into<String>) {
        self.header.scenario_fingerprint = Some(fingerprint.into());
    }

    pub fn net(&self) -> &Mlp<f32> {
        &self.net
    }

    /// Reject models whose input or output width differs from the expected one.
    pub fn check_dims(&self, input: usize, output: usize) -> Result<(), LearnError> {
        let found = [self.net.input_dim(), self.net.output_dim()];
        if found != [input, output] {
            return Err(LearnError::Incompatible { expected: [input, output], found });
        }
        Ok(())
    }

    /// Raw network output for one state vector.
    pub fn predict(&self, state: &[f64; OBSERVATION_DIM]) -> [f64; ACTION_DIM] {
        let x = self.header.normalizer.apply(state);
        let row = Array2::from_shape_fn((1, OBSERVATION_DIM), |(_, j)| x[j] as f32);
        let y = self.net.forward(row.view());
        std::array::from_fn(|j| y[[0, j]] as f64)
    }

    /// Short identifier derived from the training configuration fingerprint.
    pub fn id(&self) -> String {
        let fp = &self.header.config_fingerprint;
        format!("mlp-{}", &fp[..fp.len().min(12)])
    }
}

pub fn model_to_text(m: &PolicyModel) -> String {
    let layers = m
        .net
        .weights()
        .iter()
        .zip(m.net.biases())
        .map(|(w, b)| Layer { weights: w.iter().copied().collect(), biases: b.to_vec() })
        .collect();
    let file = ModelFile { header: m.header.clone(), layers };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn store_model(m: &PolicyModel, path: impl AsRef<Path>) -> Result<(), LearnError> {
    std::fs::write(path, model_to_text(m))?;
    Ok(())
}

/// Load a model, requiring the standard observation/action widths.
pub fn load_model(path: impl AsRef<Path>) -> Result<PolicyModel, LearnError> {
    let m = parse_model(&std::fs::read_to_string(path)?)?;
    m.check_dims(OBSERVATION_DIM, ACTION_DIM)?;
    Ok(m)
}

/// Decode a model file and check its internal consistency.
pub fn parse_model(text: &str) -> Result<PolicyModel, LearnError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| LearnError::Format(e.to_string()))?;
    let h = file.header;
    if h.version != MODEL_VERSION {
        return Err(LearnError::Format(format!("unsupported model version {}", h.version)));
    }
    if h.dims.len() < 2 || h.dims.contains(&0) || h.dims.len() != file.layers.len() + 1 {
        return Err(LearnError::Format(format!("dims {:?} do not match {} layers", h.dims, file.layers.len())));
    }
    let mut weights = Vec::with_capacity(file.layers.len());
    let mut biases = Vec::with_capacity(file.layers.len());
    for (l, layer) in file.layers.into_iter().enumerate() {
        let (rows, cols) = (h.dims[l], h.dims[l + 1]);
        if !layer.weights.iter().chain(&layer.biases).all(|v| v.is_finite()) {
            return Err(LearnError::NonFinite(format!("parameters in layer {l}")));
        }
        let w = Array2::from_shape_vec((rows, cols), layer.weights)
            .map_err(|_| LearnError::Format(format!("layer {l} weights are not {rows}×{cols}")))?;
        if layer.biases.len() != cols {
            return Err(LearnError::Format(format!("layer {l} has {} biases, expected {cols}", layer.biases.len())));
        }
        weights.push(w);
        biases.push(Array1::from(layer.biases));
    }
    let net = Mlp::from_parts(weights, biases, h.hidden_activation, h.output_activation)?;
    PolicyModel::new(h, net)
}

/// Evaluator adapter for a trained model.
#[derive(Clone, Debug)]
pub struct MlpPolicy {
    model: PolicyModel,
}

impl MlpPolicy {
    pub fn new(model: PolicyModel) -> Result<Self, LearnError> {
        model.check_dims(OBSERVATION_DIM, ACTION_DIM)?;
        Ok(Self { model })
    }
}

impl Policy for MlpPolicy {
    fn act(&mut self, obs: &Observation) -> [f64; 4] {
        self.model.predict(&obs.to_vector())
    }

    fn id(&self) -> String {
        self.model.id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{train, TrainConfig};
    use crate::dataset::tests::synthetic;
    use crate::sim::ManoeuvreKind;
    use proptest::prelude::*;

    fn trained() -> PolicyModel {
        let cfg = TrainConfig { hidden: vec![8, 6], epochs: 20, init_scale: 0.3, ..Default::default() };
        train(&synthetic(ManoeuvreKind::Climb, 30, 1), &cfg).unwrap().model
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let m = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        store_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let s = [0.1, -0.2, 0.05, 0.3, 1.2, 0.375, 0.4, 0.0, 0.1, -0.1, 0.0];
        assert_eq!(back.predict(&s), m.predict(&s));
    }

    #[test]
    fn wrong_widths_are_rejected_on_load() {
        let net: Mlp<f32> = Mlp::new(&[5, 4, 4], Activation::Relu, Activation::Tanh, 0.1, 1).unwrap();
        let mut header = trained().header().clone();
        header.dims = vec![5, 4, 4];
        let m = PolicyModel::new(header, net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("narrow.json");
        store_model(&m, &path).unwrap();
        assert!(matches!(load_model(&path), Err(LearnError::Incompatible { expected: [11, 4], found: [5, 4] })));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let text = model_to_text(&trained());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["layers"][0]["weights"].as_array_mut().unwrap().pop();
        assert!(parse_model(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["header"]["version"] = 9.into();
        assert!(parse_model(&v.to_string()).is_err());
        assert!(parse_model("{").is_err());
    }

    proptest! {
        #[test]
        fn f32_parameters_round_trip_bit_exactly(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 48)) {
            let mut m = trained();
            let w = &mut m.net.weights[0];
            for (p, v) in w.iter_mut().zip(&vals) {
                *p = *v;
            }
            let back = parse_model(&model_to_text(&m)).unwrap();
            prop_assert!(back.net.weights[0].iter().zip(m.net.weights[0].iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn parse_never_panics(text in "\\PC{0,300}") {
            let _ = parse_model(&text);
        }
    }
}
