//! Versioned JSON model documents.
//!
//! ```json
//! {"format_version": 1, "kind": "svm" | "cascade", "window": [w, h],
//!  "hog_params": {...}, "payload": {...}}
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so loading a
//! saved model and saving it again reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CascadeModel, LinearSvmModel, WindowClassifier};
use crate::error::{Error, Result};
use crate::hog::HogParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    kind: String,
    window: [usize; 2],
    /// SVM feature parameters, or the cascade's final-stage parameters.
    hog_params: HogParams,
    payload: Value,
}

impl WindowClassifier {
    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            WindowClassifier::Svm { model, hog, window } => ModelDocument {
                format_version: MODEL_FORMAT_VERSION,
                kind: "svm".into(),
                window: [window.0, window.1],
                hog_params: *hog,
                payload: serde_json::to_value(model)?,
            },
            WindowClassifier::Cascade(m) => ModelDocument {
                format_version: MODEL_FORMAT_VERSION,
                kind: "cascade".into(),
                window: [m.window_width, m.window_height],
                hog_params: m
                    .stages
                    .last()
                    .map(|s| s.hog_params)
                    .ok_or_else(|| Error::ModelFormat("cascade has no stages".into()))?,
                payload: serde_json::to_value(&m.stages)?,
            },
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let window = (doc.window[0], doc.window[1]);
        let model = match doc.kind.as_str() {
            "svm" => WindowClassifier::Svm {
                model: serde_json::from_value::<LinearSvmModel>(doc.payload)?,
                hog: doc.hog_params,
                window,
            },
            "cascade" => WindowClassifier::Cascade(CascadeModel {
                window_width: window.0,
                window_height: window.1,
                stages: serde_json::from_value(doc.payload)?,
            }),
            other => return Err(Error::ModelFormat(format!("unknown model kind {other:?}"))),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{Stage, Stump, SvmTrainConfig};
    use proptest::prelude::*;

    fn svm(weights: Vec<f64>, bias: f64) -> WindowClassifier {
        let hog = HogParams { cell_size: 16, block_size: 1, ..HogParams::default() };
        let n = weights.len();
        WindowClassifier::Svm {
            model: LinearSvmModel { weights, bias, feature_dim: n, train_config: SvmTrainConfig::default() },
            hog,
            window: (16, 16),
        }
    }

    #[test]
    fn cascade_round_trip() {
        let stage = Stage {
            weak_learners: vec![Stump { feature: 3, threshold: 0.125, polarity: -1, weight: 1.7 }],
            stage_threshold: 0.3,
            hog_params: HogParams::default().with_cell_size(16),
        };
        let m = WindowClassifier::Cascade(CascadeModel { window_width: 32, window_height: 64, stages: vec![stage] });
        let text = m.to_json().unwrap();
        let back = WindowClassifier::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_bad_documents() {
        let good = svm(vec![0.5; 9], 0.1).to_json().unwrap();
        assert!(WindowClassifier::from_json(&good.replace("\"svm\"", "\"rbf\"")).is_err());
        assert!(WindowClassifier::from_json(&good.replace("\"format_version\": 1", "\"format_version\": 7")).is_err());
        let wrong_dim = svm(vec![0.5; 4], 0.1).to_json().unwrap();
        assert!(WindowClassifier::from_json(&wrong_dim).is_err());
        let empty = r#"{"format_version":1,"kind":"cascade","window":[32,64],
            "hog_params":{"cell_size":8,"block_size":2,"block_stride":1,"bins":9,"normalization_epsilon":1e-6},
            "payload":[]}"#;
        assert!(WindowClassifier::from_json(empty).is_err());
    }

    proptest! {
        #[test]
        fn svm_text_round_trip_is_exact(ws in proptest::collection::vec(-1e3..1e3f64, 9), b in -10.0..10.0f64) {
            let m = svm(ws, b);
            let text = m.to_json().unwrap();
            let back = WindowClassifier::from_json(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_json().unwrap(), text);
        }
    }
}
