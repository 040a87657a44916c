//! ONNX models run with tract.

use std::path::Path;
use std::sync::Arc;

use picsearch_core::backend::normalize_prompt;
use picsearch_core::detect::sanitize_all;
use picsearch_core::{
    preprocess, BBox, BackendError, Detection, Detector, FeatureExtractor, FeatureVector, ImageTensor,
    PreprocessSpec, RgbImage,
};
use tokenizers::Tokenizer;
use tract_onnx::prelude::*;

use crate::model::{ModelDescriptor, ModelError};

type Plan = Arc<TypedRunnableModel>;

fn load_err(d: &ModelDescriptor, e: impl std::fmt::Display) -> ModelError {
    ModelError::Load { model_id: d.model_id.clone(), reason: e.to_string() }
}

fn mismatch(d: &ModelDescriptor, reason: impl Into<String>) -> ModelError {
    ModelError::GraphSignatureMismatch { model_id: d.model_id.clone(), reason: reason.into() }
}

fn infer_err(e: impl std::fmt::Display) -> BackendError {
    BackendError::InferenceFailure(e.to_string())
}

fn image_input(tensor: &ImageTensor) -> Tensor {
    let (h, w) = (tensor.height, tensor.width);
    tract_ndarray::Array4::from_shape_vec((1, 3, h, w), tensor.data.clone())
        .expect("tensor data matches its shape")
        .into_tensor()
}

fn concrete_shape(fact: &TypedFact) -> Option<Vec<usize>> {
    fact.shape.as_concrete().map(|s| s.to_vec())
}

fn input_names(model: &InferenceModel) -> TractResult<Vec<String>> {
    Ok(model.input_outlets()?.iter().map(|o| model.node(o.node).name.clone()).collect())
}

fn output_names(model: &InferenceModel) -> TractResult<Vec<String>> {
    // Graph outputs keep their declared name as the outlet label; the node
    // behind them is usually named after the op.
    Ok(model
        .output_outlets()?
        .iter()
        .map(|o| model.outlet_label(*o).unwrap_or(&model.node(o.node).name).to_string())
        .collect())
}

/// An image backbone whose single output is the feature vector.
pub struct OnnxExtractor {
    model_id: String,
    revision: String,
    feature_dim: usize,
    spec: PreprocessSpec,
    plan: Plan,
}

impl OnnxExtractor {
    pub fn load(d: &ModelDescriptor, file: &Path, revision: String) -> Result<Self, ModelError> {
        let dim = d.feature_dim.ok_or_else(|| mismatch(d, "extractor manifest lacks feature_dim"))?;
        let model = tract_onnx::onnx().model_for_path(file).map_err(|e| load_err(d, e))?;
        let inputs = input_names(&model).map_err(|e| load_err(d, e))?;
        if inputs.len() != 1 {
            return Err(mismatch(d, format!("expected one image input, found {inputs:?}")));
        }
        let outputs = output_names(&model).map_err(|e| load_err(d, e))?;
        if outputs.len() != 1 {
            return Err(mismatch(d, format!("expected one vector output, found {outputs:?}")));
        }
        let (h, w) = (d.preprocess.target_height as usize, d.preprocess.target_width as usize);
        let typed = model
            .with_input_fact(0, f32::fact([1, 3, h, w]).into())
            .and_then(|m| m.into_optimized())
            .map_err(|e| mismatch(d, e.to_string()))?;
        let shape = typed.output_fact(0).ok().and_then(concrete_shape);
        let numel: Option<usize> = shape.as_ref().map(|s| s.iter().product());
        if shape.as_ref().and_then(|s| s.first()) != Some(&1) || numel != Some(dim) {
            return Err(mismatch(d, format!("output shape {shape:?} is not a single {dim}-vector")));
        }
        let plan = typed.into_runnable().map_err(|e| load_err(d, e))?;
        Ok(Self { model_id: d.model_id.clone(), revision, feature_dim: dim, spec: d.preprocess.clone(), plan })
    }
}

impl FeatureExtractor for OnnxExtractor {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn revision(&self) -> &str {
        &self.revision
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn extract(&self, image: &RgbImage) -> Result<FeatureVector, BackendError> {
        let input = image_input(&preprocess(image, &self.spec));
        let out = self.plan.run(tvec!(input.into())).map_err(infer_err)?;
        let view = out[0].to_plain_array_view::<f32>().map_err(infer_err)?;
        let values: Vec<f32> = view.iter().copied().collect();
        FeatureVector::from_raw(self.model_id.clone(), values).map_err(infer_err)
    }
}

/// An open-vocabulary detector with OWL-ViT's signature: inputs `input_ids`,
/// `pixel_values`, `attention_mask`; outputs per-box `logits` (before the
/// sigmoid) and `pred_boxes` as normalized center/size boxes.
pub struct OnnxDetector {
    model_id: String,
    spec: PreprocessSpec,
    plan: Plan,
    tokenizer: Tokenizer,
    text_length: usize,
    pad_id: i64,
    template: String,
    input_order: [usize; 3],
    output_order: [usize; 2],
}

const DETECTOR_INPUTS: [&str; 3] = ["input_ids", "pixel_values", "attention_mask"];
const DETECTOR_OUTPUTS: [&str; 2] = ["logits", "pred_boxes"];

fn positions<const N: usize>(
    d: &ModelDescriptor,
    found: &[String],
    wanted: [&str; N],
) -> Result<[usize; N], ModelError> {
    if found.len() != N {
        return Err(mismatch(d, format!("expected {wanted:?}, found {found:?}")));
    }
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(wanted) {
        *slot = found
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| mismatch(d, format!("expected {wanted:?}, found {found:?}")))?;
    }
    Ok(out)
}

impl OnnxDetector {
    pub fn load(d: &ModelDescriptor, file: &Path) -> Result<Self, ModelError> {
        let tok_path = d.tokenizer.as_ref().ok_or_else(|| mismatch(d, "detector manifest lacks tokenizer"))?;
        if !tok_path.is_file() {
            return Err(ModelError::ModelFileMissing(tok_path.clone()));
        }
        let tokenizer = Tokenizer::from_file(tok_path).map_err(|e| load_err(d, e))?;
        let mut model = tract_onnx::onnx().model_for_path(file).map_err(|e| load_err(d, e))?;
        let input_order = positions(d, &input_names(&model).map_err(|e| load_err(d, e))?, DETECTOR_INPUTS)?;
        let output_order = positions(d, &output_names(&model).map_err(|e| load_err(d, e))?, DETECTOR_OUTPUTS)?;
        let (h, w) = (d.preprocess.target_height as usize, d.preprocess.target_width as usize);
        let facts: [InferenceFact; 3] =
            [i64::fact([1, d.text_length]).into(), f32::fact([1, 3, h, w]).into(), i64::fact([1, d.text_length]).into()];
        for (name_ix, fact) in facts.into_iter().enumerate() {
            model = model.with_input_fact(input_order[name_ix], fact).map_err(|e| mismatch(d, e.to_string()))?;
        }
        let typed = model.into_optimized().map_err(|e| mismatch(d, e.to_string()))?;
        let logits = typed.output_fact(output_order[0]).ok().and_then(concrete_shape);
        let boxes = typed.output_fact(output_order[1]).ok().and_then(concrete_shape);
        let ok = match (&logits, &boxes) {
            (Some(l), Some(b)) => l.len() == 3 && b.len() == 3 && l[0] == 1 && l[1] == b[1] && l[2] == 1 && b[2] == 4,
            _ => false,
        };
        if !ok {
            return Err(mismatch(d, format!("unexpected output shapes {logits:?} and {boxes:?}")));
        }
        let plan = typed.into_runnable().map_err(|e| load_err(d, e))?;
        Ok(Self {
            model_id: d.model_id.clone(),
            spec: d.preprocess.clone(),
            plan,
            tokenizer,
            text_length: d.text_length,
            pad_id: d.text_pad_id,
            template: d.prompt_template.clone(),
            input_order,
            output_order,
        })
    }

    fn encode_prompt(&self, prompt: &str) -> Result<(Tensor, Tensor), BackendError> {
        let text = self.template.replace("{}", prompt);
        let enc = self.tokenizer.encode(text, true).map_err(infer_err)?;
        let mut ids: Vec<i64> = enc.get_ids().iter().map(|&i| i as i64).collect();
        ids.truncate(self.text_length);
        let mut mask = vec![1i64; ids.len()];
        ids.resize(self.text_length, self.pad_id);
        mask.resize(self.text_length, 0);
        let shape = (1, self.text_length);
        let ids = tract_ndarray::Array2::from_shape_vec(shape, ids).map_err(infer_err)?.into_tensor();
        let mask = tract_ndarray::Array2::from_shape_vec(shape, mask).map_err(infer_err)?.into_tensor();
        Ok((ids, mask))
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Detector for OnnxDetector {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<Detection>, BackendError> {
        let prompt = normalize_prompt(prompt)?;
        let (ids, mask) = self.encode_prompt(prompt)?;
        let pixels = image_input(&preprocess(image, &self.spec));
        let mut inputs: [Option<TValue>; 3] = [None, None, None];
        for (tensor, name_ix) in [ids, pixels, mask].into_iter().zip(0..) {
            inputs[self.input_order[name_ix]] = Some(tensor.into());
        }
        let out = self.plan.run(inputs.into_iter().flatten().collect()).map_err(infer_err)?;
        let logits = out[self.output_order[0]].to_plain_array_view::<f32>().map_err(infer_err)?;
        let boxes = out[self.output_order[1]].to_plain_array_view::<f32>().map_err(infer_err)?;
        let (logits, boxes) = (logits.iter().copied().collect::<Vec<_>>(), boxes.iter().copied().collect::<Vec<_>>());

        let (tw, th) = (self.spec.target_width as f32, self.spec.target_height as f32);
        let (w, h) = (image.width(), image.height());
        let raw = logits
            .iter()
            .zip(boxes.chunks_exact(4))
            .map(|(&logit, b)| {
                let (cx, cy, bw, bh) = (b[0] * tw, b[1] * th, b[2] * tw, b[3] * th);
                let (x0, y0) = self.spec.target_to_source(w, h, cx - bw / 2.0, cy - bh / 2.0);
                let (x1, y1) = self.spec.target_to_source(w, h, cx + bw / 2.0, cy + bh / 2.0);
                Detection { bbox: BBox::new(x0, y0, x1, y1), score: sigmoid(logit), label_index: 0 }
            })
            .collect();
        Ok(sanitize_all(raw, w, h))
    }
}
