//! Frozen feature projection: feature taps, random cross-channel mixing,
//! random top-down cross-scale mixing, then per-scale concatenation of the
//! two chunks of each clip.

use loopgan_tensor::{ParamId, ParamSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurenets::{split_clip_var, FrozenAdapter, NetKind, ScaleSpec, N_TAPS};
use crate::melpipe::{MelClip, N_FRAMES, N_MELS};
use crate::real::{derive_seed, rng_for, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMode {
    General,
    Domain,
    Fusion,
}

/// One projector: a frozen feature network plus fixed random CCM/CSM weights.
#[derive(Clone, Debug)]
pub struct ProjectorStack<T> {
    adapter: FrozenAdapter<T>,
    seed: u64,
    ccm: ParamSet<T>,
    csm: ParamSet<T>,
    ccm_ids: Vec<ParamId>,
    csm_ids: Vec<ParamId>,
    /// `match_ids[l]` maps scale `l + 1` channels onto scale `l` channels.
    match_ids: Vec<Option<ParamId>>,
    specs: [ScaleSpec; N_TAPS],
}

/// Digests recorded for reproducibility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorDigests {
    pub seed: u64,
    pub feature_net: String,
    pub ccm: String,
    pub csm: String,
}

impl<T: Real> ProjectorStack<T> {
    pub fn new(adapter: FrozenAdapter<T>, seed: u64) -> Self {
        let specs = adapter.scale_specs();
        let mut rng = rng_for(seed, &[0xcc3]);
        let mut ccm = ParamSet::new();
        let mut csm = ParamSet::new();
        let mut ccm_ids = Vec::new();
        let mut csm_ids = Vec::new();
        let mut match_ids = Vec::new();
        for (l, s) in specs.iter().enumerate() {
            let c = s.channels;
            ccm_ids.push(ccm.add(format!("ccm{l}"), Tensor::randn(&[c, c, 1, 1], (1.0 / c as f64).sqrt(), &mut rng)));
            csm_ids.push(csm.add(format!("csm{l}"), Tensor::randn(&[c, c, 3, 3], (1.0 / (9 * c) as f64).sqrt(), &mut rng)));
        }
        for l in 0..N_TAPS - 1 {
            let (c_lo, c_hi) = (specs[l].channels, specs[l + 1].channels);
            match_ids.push((c_lo != c_hi).then(|| {
                csm.add(format!("match{l}"), Tensor::randn(&[c_lo, c_hi, 1, 1], (1.0 / c_hi as f64).sqrt(), &mut rng))
            }));
        }
        Self { adapter, seed, ccm, csm, ccm_ids, csm_ids, match_ids, specs }
    }

    pub fn adapter(&self) -> &FrozenAdapter<T> {
        &self.adapter
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn digests(&self) -> ProjectorDigests {
        ProjectorDigests {
            seed: self.seed,
            feature_net: self.adapter.current_digest(),
            ccm: self.ccm.digest(),
            csm: self.csm.digest(),
        }
    }

    /// `(channels, height, width)` of each aggregated feature.
    pub fn output_specs(&self) -> [ScaleSpec; N_TAPS] {
        self.specs.map(|s| ScaleSpec { channels: 2 * s.channels, ..s })
    }

    /// Four aggregated features `[N, 2 C_l, H_l, W_l]` for mels `[N, 1, 64, 200]`.
    pub fn project<'t>(&self, tape: &'t Tape<T>, mels: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let s = mels.shape();
        if s.len() != 4 || s[1..] != [1, N_MELS, N_FRAMES] {
            return Err(Error::Shape(format!("projector takes [N, 1, 64, 200] mels, got {s:?}")));
        }
        let n = s[0];
        let taps = self.adapter.extract_scales(tape, split_clip_var(mels))?;
        let ccm = self.ccm.bind(tape, false);
        let csm = self.csm.bind(tape, false);
        let mixed: Vec<Var<'t, T>> = taps.iter().zip(&self.ccm_ids).map(|(t, &id)| t.conv2d(ccm.var(id), None, 1, 0)).collect();
        let mut fused: Vec<Option<Var<'t, T>>> = vec![None; N_TAPS];
        fused[N_TAPS - 1] = Some(mixed[N_TAPS - 1].conv2d(csm.var(self.csm_ids[N_TAPS - 1]), None, 1, 1));
        for l in (0..N_TAPS - 1).rev() {
            let deeper = fused[l + 1].expect("filled top-down");
            let deeper = match self.match_ids[l] {
                Some(id) => deeper.conv2d(csm.var(id), None, 1, 0),
                None => deeper,
            };
            let up = deeper.resize_bilinear(self.specs[l].height, self.specs[l].width);
            fused[l] = Some(mixed[l].add(up).conv2d(csm.var(self.csm_ids[l]), None, 1, 1));
        }
        Ok(fused
            .into_iter()
            .map(|f| {
                let f = f.expect("every scale fused");
                Var::cat(&[f.narrow(0, 0, n), f.narrow(0, n, n)], 1)
            })
            .collect())
    }

    /// Aggregated features of one clip, without gradients.
    pub fn project_clip(&self, clip: &MelClip<T>) -> Result<Vec<Tensor<T>>> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, N_MELS, N_FRAMES], clip.values().to_vec()));
        Ok(self.project(&tape, x)?.iter().map(|v| v.value().as_ref().clone()).collect())
    }
}

/// One stack for `general` or `domain`, two stacks with independent random
/// seeds for `fusion`.
pub fn build_projectors<T: Real>(
    mode: ProjectorMode,
    general: Option<&FrozenAdapter<T>>,
    domain: Option<&FrozenAdapter<T>>,
    seed: u64,
) -> Result<Vec<ProjectorStack<T>>> {
    let need = |net: Option<&FrozenAdapter<T>>, kind: NetKind, what: &str| -> Result<FrozenAdapter<T>> {
        let net = net.ok_or_else(|| Error::Config(format!("projector mode {mode:?} needs a {what} feature network")))?;
        if net.kind() != kind {
            return Err(Error::Config(format!("expected a {kind:?} network for the {what} projector, got {:?}", net.kind())));
        }
        Ok(net.clone())
    };
    Ok(match mode {
        ProjectorMode::General => vec![ProjectorStack::new(need(general, NetKind::General, "general")?, derive_seed(seed, &[0]))],
        ProjectorMode::Domain => {
            vec![ProjectorStack::new(need(domain, NetKind::DomainSpecific, "domain")?, derive_seed(seed, &[0]))]
        }
        ProjectorMode::Fusion => vec![
            ProjectorStack::new(need(general, NetKind::General, "general")?, derive_seed(seed, &[0])),
            ProjectorStack::new(need(domain, NetKind::DomainSpecific, "domain")?, derive_seed(seed, &[1])),
        ],
    })
}

/// Concatenated aggregated features of every stack, in stack order.
pub fn project_all<'t, T: Real>(stacks: &[ProjectorStack<T>], tape: &'t Tape<T>, mels: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
    let mut out = Vec::with_capacity(stacks.len() * N_TAPS);
    for s in stacks {
        out.extend(s.project(tape, mels)?);
    }
    Ok(out)
}
