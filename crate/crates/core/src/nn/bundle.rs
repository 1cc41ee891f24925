use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use super::mlp::{Activation, IdGen, Mlp, MlpSpec};
use super::saf::SafModule;
use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};

/// Learning-rate multiplier for the bottleneck, classifier and SAF module.
pub const HEAD_LR_MULTIPLIER: f64 = 10.0;

/// Adversarial backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    /// Binary domain discriminator.
    Dann,
    /// Auxiliary classifier trained on margin disparity.
    Mdd,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Dann => "dann",
            Backbone::Mdd => "mdd",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dann" => Ok(Backbone::Dann),
            "mdd" => Ok(Backbone::Mdd),
            other => Err(Error::Config(format!("unknown backbone `{other}` (dann | mdd)"))),
        }
    }
}

/// Layer widths and regularization of the five blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub input_dim: usize,
    /// Hidden widths of F before its output layer.
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub bottleneck_dim: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub saf_dim: usize,
    pub saf_bottlenecks: usize,
    pub bottleneck_dropout: f64,
    pub classifier_dropout: f64,
    /// Ablation: mix bottleneck outputs (`F → B → M → C`) instead of
    /// extractor outputs.
    pub saf_after_bottleneck: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input_dim: 2,
            feature_hidden: vec![64],
            feature_dim: 32,
            bottleneck_dim: 16,
            classifier_hidden: 16,
            num_classes: 2,
            saf_dim: 16,
            saf_bottlenecks: 2,
            bottleneck_dropout: 0.1,
            classifier_dropout: 0.1,
            saf_after_bottleneck: false,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let widths = [
            ("input_dim", self.input_dim),
            ("feature_dim", self.feature_dim),
            ("bottleneck_dim", self.bottleneck_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("saf_dim", self.saf_dim),
            ("saf_bottlenecks", self.saf_bottlenecks),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.feature_hidden.contains(&0) {
            return Err(Error::Config("feature_hidden widths must be positive".into()));
        }
        for (name, r) in [
            ("bottleneck_dropout", self.bottleneck_dropout),
            ("classifier_dropout", self.classifier_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Width of the vectors the SAF module mixes.
    pub fn saf_input_dim(&self) -> usize {
        if self.saf_after_bottleneck {
            self.bottleneck_dim
        } else {
            self.feature_dim
        }
    }

    fn feature_spec(&self) -> MlpSpec {
        let mut widths = self.feature_hidden.clone();
        widths.push(self.feature_dim);
        MlpSpec::plain(self.input_dim, &widths, Activation::Relu, Activation::Relu)
    }

    fn bottleneck_spec(&self) -> MlpSpec {
        MlpSpec {
            input_width: self.feature_dim,
            layer_widths: vec![self.bottleneck_dim],
            activations: vec![Activation::Relu],
            dropout_rates: vec![self.bottleneck_dropout],
            use_batch_norm: vec![true],
        }
    }

    fn head_spec(&self, outputs: usize) -> MlpSpec {
        MlpSpec {
            input_width: self.bottleneck_dim,
            layer_widths: vec![self.classifier_hidden, outputs],
            activations: vec![Activation::Relu, Activation::None],
            dropout_rates: vec![self.classifier_dropout, 0.0],
            use_batch_norm: vec![false, false],
        }
    }
}

/// The five trainable blocks: extractor F, bottleneck B, classifier C,
/// adversary D and SAF module M.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub backbone: Backbone,
    pub dims: ModelDims,
    pub feature: Mlp,
    pub bottleneck: Mlp,
    pub classifier: Mlp,
    pub adversary: Mlp,
    pub saf: SafModule,
}

impl ModelBundle {
    /// Initializes every block. B, C and M train at ten times the base
    /// learning rate; F and D at the base rate.
    pub fn build(backbone: Backbone, dims: &ModelDims, rng: &mut dyn RngCore) -> Result<Self> {
        dims.validate()?;
        let mut ids = IdGen::default();
        let feature = Mlp::new("F", dims.feature_spec(), 1.0, &mut ids, rng)?;
        let bottleneck = Mlp::new("B", dims.bottleneck_spec(), HEAD_LR_MULTIPLIER, &mut ids, rng)?;
        let classifier = Mlp::new(
            "C",
            dims.head_spec(dims.num_classes),
            HEAD_LR_MULTIPLIER,
            &mut ids,
            rng,
        )?;
        let adversary_out = match backbone {
            Backbone::Dann => 2,
            Backbone::Mdd => dims.num_classes,
        };
        let adversary = Mlp::new("D", dims.head_spec(adversary_out), 1.0, &mut ids, rng)?;
        let saf = SafModule::new(
            dims.saf_input_dim(),
            dims.saf_dim,
            dims.saf_bottlenecks,
            HEAD_LR_MULTIPLIER,
            &mut ids,
            rng,
        )?;
        Ok(Self {
            backbone,
            dims: dims.clone(),
            feature,
            bottleneck,
            classifier,
            adversary,
            saf,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    /// `F(x)`, shape `batch × feature_dim`.
    pub fn forward_features<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.feature.forward(tape, x, training, rng)
    }

    /// `B(φ)`.
    pub fn bottleneck<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        features: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.bottleneck.forward(tape, features, training, rng)
    }

    /// `B(φ)` with batch-norm statistics from the first `stat_rows` rows,
    /// so trailing rows are normalized like the batch without shaping it.
    pub fn bottleneck_anchored<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        features: Var,
        stat_rows: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.bottleneck.forward_anchored(tape, features, stat_rows, training, rng)
    }

    /// `C(b)` on bottleneck outputs.
    pub fn classifier_head<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        bottleneck_out: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.classifier.forward(tape, bottleneck_out, training, rng)
    }

    /// `D(GRL(b))` on bottleneck outputs.
    pub fn adversary_head<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        bottleneck_out: Var,
        lambda_d: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let reversed = tape.grad_reverse(bottleneck_out, lambda_d);
        self.adversary.forward(tape, reversed, training, rng)
    }

    /// Class logits `C(B(φ))` for extracted features.
    pub fn classify<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        features: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let b = self.bottleneck(tape, features, training, rng)?;
        self.classifier_head(tape, b, training, rng)
    }

    /// Adversary logits `D(GRL(B(φ)))` for extracted features.
    pub fn adversary_logits<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        features: Var,
        lambda_d: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let b = self.bottleneck(tape, features, training, rng)?;
        self.adversary_head(tape, b, lambda_d, training, rng)
    }

    /// SAF mixing weight for row-aligned feature pairs (`m×1`).
    pub fn saf_weight(&mut self, tape: &mut Tape, first: Var, second: Var) -> Result<Var> {
        self.saf.weight(tape, first, second)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.feature
            .params()
            .chain(self.bottleneck.params())
            .chain(self.classifier.params())
            .chain(self.adversary.params())
            .chain(self.saf.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.feature
            .params_mut()
            .chain(self.bottleneck.params_mut())
            .chain(self.classifier.params_mut())
            .chain(self.adversary.params_mut())
            .chain(self.saf.params_mut())
            .collect()
    }

    /// Copies gradients for every parameter off `tape` (zeros where none flowed).
    pub fn pull_grads(&mut self, tape: &Tape) {
        for p in self.params_mut() {
            p.pull_grad(tape);
        }
    }

    pub fn step(&mut self, base_lr: f64, momentum: f64) -> Result<()> {
        crate::autodiff::sgd_nesterov_step(self.params_mut(), base_lr, momentum)
    }

    /// Blocks owning batch-norm running statistics, by name.
    pub(crate) fn stat_blocks_mut(&mut self) -> [(&'static str, &mut Mlp); 4] {
        [
            ("F", &mut self.feature),
            ("B", &mut self.bottleneck),
            ("C", &mut self.classifier),
            ("D", &mut self.adversary),
        ]
    }

    pub(crate) fn stat_blocks(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("F", &self.feature),
            ("B", &self.bottleneck),
            ("C", &self.classifier),
            ("D", &self.adversary),
        ]
    }
}
