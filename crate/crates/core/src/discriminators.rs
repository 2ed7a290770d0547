//! Discriminator heads over projected features (and the plain mel
//! discriminator used by the baseline), plus the summed logistic objective.

use loopgan_tensor::{Bound, ParamSet, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurenets::ScaleSpec;
use crate::melpipe::{N_FRAMES, N_MELS};
use crate::nn::SnConv2d;
use crate::real::{rng_for, Real};

pub const HEAD_WIDTH: usize = 64;
pub const HEAD_DEPTH: usize = 4;
const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DiscriminatorKind {
    /// One head per aggregated feature.
    Projected { inputs: Vec<ScaleSpec> },
    /// A single head on the raw `[N, 1, 64, 200]` mel.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub width: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorHead {
    input: ScaleSpec,
    convs: Vec<SnConv2d>,
    out: SnConv2d,
}

impl DiscriminatorHead {
    pub fn input(&self) -> ScaleSpec {
        self.input
    }

    /// Patch logits `[N, 1, h, w]`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, buffers: &ParamSet<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let want = [self.input.channels, self.input.height, self.input.width];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::Shape(format!("head expects [N, {}, {}, {}], got {s:?}", want[0], want[1], want[2])));
        }
        let mut h = x;
        for c in &self.convs {
            h = c.forward(p, buffers, h).leaky_relu(T::lit(SLOPE));
        }
        Ok(self.out.forward(p, buffers, h))
    }
}

/// The trainable side of the game. Spectral-norm power-iteration vectors
/// live in `buffers`.
#[derive(Clone, Debug)]
pub struct Discriminators<T> {
    config: DiscriminatorConfig,
    params: ParamSet<T>,
    buffers: ParamSet<T>,
    heads: Vec<DiscriminatorHead>,
}

impl<T: Real> Discriminators<T> {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.width == 0 {
            return Err(Error::Config("discriminator width must be positive".into()));
        }
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        let mut rng = rng_for(config.seed, &[0xd15c]);
        let w = config.width;
        let mut heads = Vec::new();
        let mut build = |name: String, input: ScaleSpec, widths: &[usize]| {
            let mut convs = Vec::new();
            let mut cin = input.channels;
            for (i, &cout) in widths.iter().enumerate() {
                convs.push(SnConv2d::new(&mut params, &mut buffers, &format!("{name}.conv{i}"), cin, cout, 3, 2, &mut rng));
                cin = cout;
            }
            let out = SnConv2d::new(&mut params, &mut buffers, &format!("{name}.logits"), cin, 1, 1, 1, &mut rng);
            DiscriminatorHead { input, convs, out }
        };
        match &config.kind {
            DiscriminatorKind::Projected { inputs } => {
                if inputs.is_empty() {
                    return Err(Error::Config("projected discriminator needs at least one input".into()));
                }
                for (l, &spec) in inputs.iter().enumerate() {
                    heads.push(build(format!("head{l}"), spec, &[w; HEAD_DEPTH]));
                }
            }
            DiscriminatorKind::Baseline => {
                let input = ScaleSpec { channels: 1, height: N_MELS, width: N_FRAMES };
                let widths = [(w / 4).max(1), (w / 2).max(1), w, w, w];
                heads.push(build("mel".into(), input, &widths));
            }
        }
        Ok(Self { config, params, buffers, heads })
    }

    pub fn projected(inputs: &[ScaleSpec], width: usize, seed: u64) -> Result<Self> {
        Self::new(DiscriminatorConfig { kind: DiscriminatorKind::Projected { inputs: inputs.to_vec() }, width, seed })
    }

    pub fn baseline(width: usize, seed: u64) -> Result<Self> {
        Self::new(DiscriminatorConfig { kind: DiscriminatorKind::Baseline, width, seed })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn heads(&self) -> &[DiscriminatorHead] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.buffers
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    /// One power-iteration step on every spectrally normalized layer.
    pub fn power_iterate(&mut self) {
        for h in &self.heads {
            for c in h.convs.iter().chain(std::iter::once(&h.out)) {
                c.power_iterate(&self.params, &mut self.buffers);
            }
        }
    }

    /// One logit map per input, in order.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, inputs: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if inputs.len() != self.heads.len() {
            return Err(Error::Config(format!("{} discriminator inputs for {} heads", inputs.len(), self.heads.len())));
        }
        self.heads.iter().zip(inputs).map(|(h, &x)| h.forward(p, &self.buffers, x)).collect()
    }
}

/// How each head's expectation term enters the discriminator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `Σ_l mean softplus(−r) + mean softplus(f)`.
    #[default]
    Sum,
    /// `−Σ_l exp(−(mean softplus(−r) + mean softplus(f)))`, the
    /// exponentiated per-head log-likelihood. Affects the discriminator only.
    Exp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadDTerm {
    pub real_logit_mean: f64,
    pub fake_logit_mean: f64,
    pub term: f64,
}

/// Losses of one training step with the per-head breakdown. The totals are
/// the sums of the per-head terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLossReport {
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_terms: Vec<HeadDTerm>,
    pub g_terms: Vec<f64>,
}

pub fn loss_d<'t, T: Real>(real: &[Var<'t, T>], fake: &[Var<'t, T>], form: LossForm) -> Result<(Var<'t, T>, Vec<HeadDTerm>)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Config(format!("loss_d got {} real and {} fake logit maps", real.len(), fake.len())));
    }
    let mut total: Option<Var<'t, T>> = None;
    let mut terms = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let mut term = r.neg().softplus().mean().add(f.softplus().mean());
        if form == LossForm::Exp {
            term = term.neg().exp().neg();
        }
        terms.push(HeadDTerm {
            real_logit_mean: r.value().mean().as_f64(),
            fake_logit_mean: f.value().mean().as_f64(),
            term: term.item().as_f64(),
        });
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    Ok((total.expect("nonempty"), terms))
}

pub fn loss_g<'t, T: Real>(fake: &[Var<'t, T>]) -> Result<(Var<'t, T>, Vec<f64>)> {
    let mut parts = fake.iter().map(|f| f.neg().softplus().mean());
    let first = parts.next().ok_or_else(|| Error::Config("loss_g got no logit maps".into()))?;
    let mut terms = vec![first.item().as_f64()];
    let mut total = first;
    for t in parts {
        terms.push(t.item().as_f64());
        total = total.add(t);
    }
    Ok((total, terms))
}
