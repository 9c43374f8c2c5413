//! Modality-specific projectors: an affine map (optionally preceded by one
//! tanh hidden layer) followed by L2 normalization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Dense {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..=bound));
        Dense { weight, bias }
    }

    fn zeros_like(&self) -> Dense {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Array1<f64>,
    hidden: Option<Array1<f64>>,
    norm: f64,
    pub output: Array1<f64>,
}

impl Projector {
    pub fn init(
        input_dim: usize,
        hidden_dim: Option<usize>,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Projector {
        match hidden_dim {
            Some(h) => Projector {
                hidden: Some(Dense::init(input_dim, h, rng)),
                output: Dense::init(h, output_dim, rng),
            },
            None => Projector {
                hidden: None,
                output: Dense::init(input_dim, output_dim, rng),
            },
        }
    }

    pub fn zeros_like(&self) -> Projector {
        Projector {
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            output: self.output.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.ncols()
    }

    fn pre_norm(&self, x: ArrayView1<f64>) -> Result<(Option<Array1<f64>>, Array1<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} for projector expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(match &self.hidden {
            Some(layer) => {
                let h = layer.apply(x).mapv(f64::tanh);
                let z = self.output.apply(h.view());
                (Some(h), z)
            }
            None => (None, self.output.apply(x)),
        })
    }

    pub fn forward_cached(&self, x: ArrayView1<f64>) -> Result<ForwardCache> {
        let (hidden, z) = self.pre_norm(x)?;
        let norm = z.dot(&z).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite(format!(
                "projector pre-normalization norm {norm}"
            )));
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            hidden,
            norm,
            output: z / norm,
        })
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.forward_cached(x).map(|c| c.output)
    }

    /// Normalized embeddings for every row of `x`.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            out.row_mut(i).assign(&self.forward(row)?);
        }
        Ok(out)
    }

    /// Accumulate into `grads` the parameter gradient given `d loss / d output`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView1<f64>,
        grads: &mut Projector,
    ) {
        let u = &cache.output;
        // d(z/|z|)/dz = (I - u u^T) / |z|
        let g_z = (&grad_output - &(u * u.dot(&grad_output))) / cache.norm;
        let layer_input = cache.hidden.as_ref().unwrap_or(&cache.input);
        accumulate_outer(&mut grads.output.weight, layer_input.view(), g_z.view());
        grads.output.bias += &g_z;
        if let (Some(h), Some(g_layer)) = (&cache.hidden, grads.hidden.as_mut()) {
            let g_h = self.output.weight.dot(&g_z);
            let g_a = &g_h * &h.mapv(|t| 1.0 - t * t);
            accumulate_outer(&mut g_layer.weight, cache.input.view(), g_a.view());
            g_layer.bias += &g_a;
        }
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Projector) {
        self.output.weight.scaled_add(alpha, &other.output.weight);
        self.output.bias.scaled_add(alpha, &other.output.bias);
        if let (Some(a), Some(b)) = (self.hidden.as_mut(), other.hidden.as_ref()) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(h.weight.as_slice().expect("standard layout"));
            out.push(h.bias.as_slice().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(h.weight.as_slice_mut().expect("standard layout"));
            out.push(h.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            block.copy_from_slice(&values[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }
}

fn accumulate_outer(target: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            target.row_mut(i).scaled_add(ai, &b);
        }
    }
}

/// One projector per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub visible: Projector,
    pub infrared: Projector,
}

impl EncoderParams {
    /// Both modality projectors start from the same draw, so the two
    /// modalities share an initial embedding geometry.
    pub fn init(
        input_dim: usize,
        hidden_dim: Option<usize>,
        output_dim: usize,
        seed: u64,
    ) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Projector::init(input_dim, hidden_dim, output_dim, &mut rng);
        EncoderParams {
            visible: p.clone(),
            infrared: p,
        }
    }

    pub fn get(&self, modality: Modality) -> &Projector {
        match modality {
            Modality::Visible => &self.visible,
            Modality::Infrared => &self.infrared,
        }
    }

    pub fn get_mut(&mut self, modality: Modality) -> &mut Projector {
        match modality {
            Modality::Visible => &mut self.visible,
            Modality::Infrared => &mut self.infrared,
        }
    }

    pub fn zeros_like(&self) -> EncoderParams {
        EncoderParams {
            visible: self.visible.zeros_like(),
            infrared: self.infrared.zeros_like(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.visible.output_dim()
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &EncoderParams) {
        self.visible.scaled_add(alpha, &other.visible);
        self.infrared.scaled_add(alpha, &other.infrared);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.visible.flatten();
        v.extend(self.infrared.flatten());
        v
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.visible.num_params();
        if values.len() < n {
            return Err(Error::Shape("too few parameter values".into()));
        }
        self.visible.assign_flat(&values[..n])?;
        self.infrared.assign_flat(&values[n..])
    }

    pub fn is_finite(&self) -> bool {
        self.visible.is_finite() && self.infrared.is_finite()
    }
}
