use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{network_shapes, threshold_lens, Params, N_NETWORK, N_WITH_QUANT};
use crate::error::{Error, Result};
use crate::real::Real;

/// Fake-quantization settings carried by a model once thresholds are attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantState {
    /// log2 threshold of the input quantizer, calibrated from data and fixed.
    pub input_log2_t: f64,
    /// When false the float graph runs untouched and thresholds stay idle.
    pub enabled: bool,
    /// Quantize the dense head weights too (full-int8 evaluation).
    pub quantize_head: bool,
}

/// Running mean and (unbiased) variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Real> BnStats<F> {
    pub fn new(n: usize) -> Self {
        Self {
            mean: vec![F::zero(); n],
            var: vec![F::one(); n],
        }
    }

    fn cast<G: Real>(&self) -> BnStats<G> {
        BnStats {
            mean: self.mean.iter().map(|v| G::of(v.as_f64())).collect(),
            var: self.var.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }
}

/// The CNN: configuration, parameters, batch-norm running statistics and
/// optional quantizer state.
///
/// Every mutable access to the parameters bumps a generation counter so a
/// forward cache can detect that it no longer matches the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F = f32> {
    config: ModelConfig,
    params: Params<F>,
    running: [BnStats<F>; 3],
    quant: Option<QuantState>,
    generation: u64,
}

/// Fresh model with Glorot-uniform weights drawn from `seed`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = Params::init(cfg, &mut rng);
    Model::from_params(cfg.clone(), params)
}

impl<F: Real> Model<F> {
    pub fn from_params(config: ModelConfig, params: Params<F>) -> Result<Self> {
        config.validate()?;
        let shapes = network_shapes(&config);
        if params.tensors.len() != N_NETWORK && params.tensors.len() != N_WITH_QUANT {
            return Err(Error::Shape(format!("expected {N_NETWORK} tensors, got {}", params.tensors.len())));
        }
        for (i, (r, c)) in shapes.iter().enumerate() {
            if params.tensors[i].len() != r * c {
                return Err(Error::Shape(format!(
                    "tensor {i} has {} values, expected {r}x{c}",
                    params.tensors[i].len()
                )));
            }
        }
        if params.has_thresholds() {
            for (j, n) in threshold_lens(&config).iter().enumerate() {
                if params.tensors[N_NETWORK + j].len() != *n {
                    return Err(Error::Shape(format!("threshold tensor {j} has wrong length")));
                }
            }
        }
        let running = [
            BnStats::new(config.temporal_filters),
            BnStats::new(config.spatial_maps()),
            BnStats::new(config.separable_filters),
        ];
        let quant = params.has_thresholds().then_some(QuantState {
            input_log2_t: 0.0,
            enabled: true,
            quantize_head: true,
        });
        Ok(Self {
            config,
            params,
            running,
            quant,
            generation: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<F> {
        self.generation += 1;
        &mut self.params
    }

    pub fn running(&self) -> &[BnStats<F>; 3] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [BnStats<F>; 3] {
        &mut self.running
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn quant(&self) -> Option<&QuantState> {
        self.quant.as_ref()
    }

    /// True when the forward pass inserts fake-quantization nodes.
    pub fn fake_quant_active(&self) -> bool {
        self.quant.is_some_and(|q| q.enabled)
    }

    /// Attach quantizer thresholds (one tensor per quantizer, see
    /// [`threshold_lens`]) and the fixed input threshold.
    pub fn attach_quantizers(&mut self, thresholds: Vec<Vec<F>>, input_log2_t: f64) -> Result<()> {
        let lens = threshold_lens(&self.config);
        if thresholds.len() != lens.len() || thresholds.iter().zip(lens).any(|(t, n)| t.len() != n) {
            return Err(Error::Shape("threshold tensors do not match the model".into()));
        }
        self.generation += 1;
        self.params.tensors.truncate(N_NETWORK);
        self.params.tensors.extend(thresholds);
        self.quant = Some(QuantState {
            input_log2_t,
            enabled: true,
            quantize_head: true,
        });
        Ok(())
    }

    pub fn set_quant_state(&mut self, state: QuantState) -> Result<()> {
        if !self.params.has_thresholds() {
            return Err(Error::State("no quantizer thresholds attached".into()));
        }
        self.generation += 1;
        self.quant = Some(state);
        Ok(())
    }

    /// Drop all quantizers, returning to a plain float model.
    pub fn detach_quantizers(&mut self) {
        self.generation += 1;
        self.params.tensors.truncate(N_NETWORK);
        self.quant = None;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.network_count()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            running: [self.running[0].cast(), self.running[1].cast(), self.running[2].cast()],
            quant: self.quant,
            generation: 0,
        }
    }
}
