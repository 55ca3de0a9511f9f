//! One photon of the measurement-and-feedback protocol.
//!
//! Each incoming photon is either detected at `D+`/`D−` (probability
//! `η Tr[M± ρ M±†]`) or lost (probability `1 − η`). After the Kraus update the
//! two ensembles are rotated by `±Ω` about x (`exp(−iΩ Jx⁻)`) and, on a
//! detection only, the feedback rotation `exp(iλ Jy⁺)` is applied with `λ`
//! chosen to cancel `⟨Jz⁺⟩`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{build_joint_ops, JointOps, LocalRotation, SpinBasis};
use crate::state::{QuantumState, Unnormalized};
use crate::C64;

/// Branches whose trace falls below this are treated as impossible draws.
pub const ZERO_BRANCH_TRACE: f64 = 1e-14;
/// Relative size of `⟨Jx⁺⟩` below which the feedback angle is undefined.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;
/// `χN` above which the second-order angle formula is flagged.
pub const CHI_N_WARNING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    None,
    SimpleExact,
    SimpleApprox,
    Adiabatic,
}

impl FeedbackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeedbackMode::None => "none",
            FeedbackMode::SimpleExact => "simple-exact",
            FeedbackMode::SimpleApprox => "simple-approx",
            FeedbackMode::Adiabatic => "adiabatic",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeedbackMode::None),
            "simple-exact" => Ok(FeedbackMode::SimpleExact),
            // the bare name refers to the closed-form angle
            "simple" | "simple-approx" => Ok(FeedbackMode::SimpleApprox),
            "adiabatic" => Ok(FeedbackMode::Adiabatic),
            other => Err(Error::config("feedback", format!("unknown mode `{other}`"))),
        }
    }
}

/// Which formula produces the raw feedback angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSource {
    /// Cancel `⟨Jz⁺⟩` of the post-measurement state exactly.
    Exact,
    /// Second-order-in-χ closed form evaluated on the pre-measurement state.
    Approx,
}

impl AngleSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            AngleSource::Exact => "exact",
            AngleSource::Approx => "approx",
        }
    }
}

impl fmt::Display for AngleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AngleSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(AngleSource::Exact),
            "approx" => Ok(AngleSource::Approx),
            other => Err(Error::config(
                "adiabatic-base",
                format!("unknown source `{other}`"),
            )),
        }
    }
}

/// Rotation angle entering the closed-form feedback angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameAngle {
    /// The single per-photon rotation `Ω`.
    Incremental,
    /// The accumulated rotation `(n + 1) Ω`.
    Accumulated,
}

impl FrameAngle {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameAngle::Incremental => "incremental",
            FrameAngle::Accumulated => "accumulated",
        }
    }
}

impl fmt::Display for FrameAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameAngle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" => Ok(FrameAngle::Incremental),
            "accumulated" => Ok(FrameAngle::Accumulated),
            other => Err(Error::config(
                "frame-angle",
                format!("unknown value `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub mode: FeedbackMode,
    /// `x = n · cut_scale` in the cut `x e^{−x}`.
    pub cut_scale: f64,
    /// Photon index from which the cut is enforced.
    pub activation_step: usize,
    /// Angle formula underlying the adiabatic mode.
    pub adiabatic_base: AngleSource,
}

impl Default for FeedbackPolicy {
    fn default() -> Self {
        Self {
            mode: FeedbackMode::Adiabatic,
            cut_scale: 1e-4,
            activation_step: 20_000,
            adiabatic_base: AngleSource::Exact,
        }
    }
}

impl FeedbackPolicy {
    pub fn with_mode(mode: FeedbackMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Angle formula in use, `None` when no feedback is applied.
    pub fn source(&self) -> Option<AngleSource> {
        match self.mode {
            FeedbackMode::None => None,
            FeedbackMode::SimpleExact => Some(AngleSource::Exact),
            FeedbackMode::SimpleApprox => Some(AngleSource::Approx),
            FeedbackMode::Adiabatic => Some(self.adiabatic_base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_atoms: usize,
    /// Phase shift per photon, radians.
    pub chi: f64,
    /// Frame rotation per photon in units of π.
    pub omega_div_pi: f64,
    /// Detector efficiency.
    pub eta: f64,
    pub n_photons: usize,
    pub policy: FeedbackPolicy,
    pub seed: u64,
    pub record_stride: usize,
    pub frame_angle: FrameAngle,
    /// Relative amplitude of the uniform noise multiplying each applied angle.
    pub lambda_noise: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_atoms: 10,
            chi: 0.03,
            omega_div_pi: 0.1,
            eta: 1.0,
            n_photons: 50_000,
            policy: FeedbackPolicy::default(),
            seed: 0,
            record_stride: 100,
            frame_angle: FrameAngle::Incremental,
            lambda_noise: 0.0,
        }
    }
}

impl ProtocolConfig {
    pub fn omega(&self) -> f64 {
        self.omega_div_pi * PI
    }

    /// Checks every field; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_atoms == 0 {
            return Err(Error::config("n-atoms", "must be a positive integer"));
        }
        if !self.chi.is_finite() {
            return Err(Error::config("chi", "must be finite"));
        }
        if !self.omega_div_pi.is_finite() {
            return Err(Error::config("omega-div-pi", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("eta", "must lie in [0, 1]"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if !(self.policy.cut_scale > 0.0 && self.policy.cut_scale.is_finite()) {
            return Err(Error::config("cut-scale", "must be positive"));
        }
        if !(self.lambda_noise >= 0.0 && self.lambda_noise.is_finite()) {
            return Err(Error::config("lambda-noise", "must be non-negative"));
        }
        let mut warnings = Vec::new();
        let chi_n = self.chi.abs() * self.n_atoms as f64;
        if chi_n > CHI_N_WARNING && self.policy.source() == Some(AngleSource::Approx) {
            warnings.push(format!(
                "chi*N = {chi_n} exceeds {CHI_N_WARNING}; the closed-form feedback angle assumes chi*N << 1"
            ));
        }
        Ok(warnings)
    }
}

/// Product of two x-polarized coherent spin states: amplitude
/// `sqrt(C(N, k)) / 2^{N/2}` on each single-ensemble index.
pub fn initial_state(basis: &SpinBasis) -> QuantumState {
    let single = coherent_x_amplitudes(basis.n_atoms());
    let d = basis.single_dim();
    let mut psi = DVector::<C64>::zeros(basis.joint_dim());
    for k1 in 0..d {
        for k2 in 0..d {
            psi[basis.joint_index(k1, k2)] = C64::new(single[k1] * single[k2], 0.0);
        }
    }
    QuantumState::Pure(psi)
}

pub fn coherent_x_amplitudes(n: usize) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    let mut ln_binom = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                ln_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (0.5 * (ln_binom - n as f64 * ln2)).exp()
        })
        .collect()
}

/// `M± = (I ± exp(−iχ(N − Jz⁺))) / 2`, diagonal in the joint basis.
#[derive(Debug, Clone)]
pub struct KrausPair {
    pub chi: f64,
    pub plus: DMatrix<C64>,
    pub minus: DMatrix<C64>,
    plus_diag: Vec<C64>,
    minus_diag: Vec<C64>,
}

impl KrausPair {
    pub fn plus_diag(&self) -> &[C64] {
        &self.plus_diag
    }

    pub fn minus_diag(&self) -> &[C64] {
        &self.minus_diag
    }

    pub fn diag(&self, which: Detection) -> &[C64] {
        match which {
            Detection::Plus => &self.plus_diag,
            Detection::Minus => &self.minus_diag,
        }
    }

    /// Largest entrywise `|M₊†M₊ + M₋†M₋ − I|`.
    pub fn completeness_defect(&self) -> f64 {
        let sum = self.plus.adjoint() * &self.plus + self.minus.adjoint() * &self.minus;
        let id = DMatrix::<C64>::identity(sum.nrows(), sum.ncols());
        crate::spin::max_abs_diff(&sum, &id)
    }
}

pub fn kraus_pair(basis: &SpinBasis, chi: f64) -> KrausPair {
    let n = basis.n_atoms() as f64;
    let dim = basis.joint_dim();
    let mut plus_diag = Vec::with_capacity(dim);
    let mut minus_diag = Vec::with_capacity(dim);
    for j in 0..dim {
        let (k1, k2) = basis.split_index(j);
        let total = basis.magnetic(k1) + basis.magnetic(k2);
        let phase = C64::from_polar(1.0, -chi * (n - total));
        plus_diag.push((C64::new(1.0, 0.0) + phase) * 0.5);
        minus_diag.push((C64::new(1.0, 0.0) - phase) * 0.5);
    }
    KrausPair {
        chi,
        plus: DMatrix::from_diagonal(&DVector::from_column_slice(&plus_diag)),
        minus: DMatrix::from_diagonal(&DVector::from_column_slice(&minus_diag)),
        plus_diag,
        minus_diag,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Plus,
    Minus,
    None,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Plus => "plus",
            Outcome::Minus => "minus",
            Outcome::None => "none",
        }
    }

    pub fn detection(&self) -> Option<Detection> {
        match self {
            Outcome::Plus => Some(Detection::Plus),
            Outcome::Minus => Some(Detection::Minus),
            Outcome::None => None,
        }
    }
}

impl From<Detection> for Outcome {
    fn from(d: Detection) -> Self {
        match d {
            Detection::Plus => Outcome::Plus,
            Detection::Minus => Outcome::Minus,
        }
    }
}

impl Detection {
    fn name(&self) -> &'static str {
        match self {
            Detection::Plus => "plus",
            Detection::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probabilities {
    pub plus: f64,
    pub minus: f64,
    pub none: f64,
}

impl Probabilities {
    /// Inverse CDF in the fixed order plus, minus, none.
    pub fn sample(&self, draw: f64) -> Outcome {
        if draw < self.plus {
            Outcome::Plus
        } else if draw < self.plus + self.minus {
            Outcome::Minus
        } else {
            Outcome::None
        }
    }

    pub fn of(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Plus => self.plus,
            Outcome::Minus => self.minus,
            Outcome::None => self.none,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub kind: Outcome,
    pub probability: f64,
    pub lambda_applied: f64,
    /// The feedback denominator was degenerate and the angle was set to zero.
    pub degenerate: bool,
}

/// Expectations on the pre-measurement state entering the closed-form angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMoments {
    /// `⟨(Jz⁺)²⟩`
    pub jz_plus_sq: f64,
    /// `⟨Jy⁻ Jz⁺ + Jz⁺ Jy⁻⟩`
    pub anticommutator: f64,
    /// `⟨Jx⁺⟩`
    pub jx_plus: f64,
}

/// Closed-form feedback angle from pre-measurement moments:
///
/// `tan λ₊ = −χ²N (2⟨(Jz⁺)²⟩cosθ + ⟨[Jy⁻,Jz⁺]₊⟩sinθ) / (4⟨Jx⁺⟩)`
/// `tan λ₋ = (2⟨(Jz⁺)²⟩cosθ + ⟨[Jy⁻,Jz⁺]₊⟩sinθ) / (N⟨Jx⁺⟩)`
pub fn approx_angle(
    which: Detection,
    moments: &AngleMoments,
    chi: f64,
    theta: f64,
    n_atoms: usize,
) -> Result<f64> {
    if moments.jx_plus.abs() < DEGENERATE_DENOMINATOR {
        return Err(Error::DegenerateDenominator {
            value: moments.jx_plus,
        });
    }
    let n = n_atoms as f64;
    let drive = 2.0 * moments.jz_plus_sq * theta.cos() + moments.anticommutator * theta.sin();
    let tan = match which {
        Detection::Plus => -chi * chi * n * drive / (4.0 * moments.jx_plus),
        Detection::Minus => drive / (n * moments.jx_plus),
    };
    Ok(tan.atan())
}

/// Angle `λ ∈ (−π/2, π/2)` with `⟨Jz⁺⟩cosλ + ⟨Jx⁺⟩sinλ = 0`, i.e. the rotation
/// `exp(iλJy⁺)` that cancels `⟨Jz⁺⟩`. Both moments may be unnormalized.
pub fn exact_angle(jz_plus: f64, jx_plus: f64, trace: f64) -> Result<f64> {
    if jx_plus.abs() < DEGENERATE_DENOMINATOR * trace.abs() || !jx_plus.is_finite() {
        return Err(Error::DegenerateDenominator { value: jx_plus });
    }
    Ok((-jz_plus / jx_plus).atan())
}

/// Clamps `|λ|` to `x e^{−x}`, `x = n · cut_scale`, from the activation step on.
pub fn adiabatic_clamp(lambda_raw: f64, n: usize, policy: &FeedbackPolicy) -> f64 {
    if n < policy.activation_step || lambda_raw == 0.0 {
        return lambda_raw;
    }
    let x = n as f64 * policy.cut_scale;
    let cut = x * (-x).exp();
    lambda_raw.signum() * lambda_raw.abs().min(cut)
}

/// Operators and caches shared by every step of a configuration.
#[derive(Debug, Clone)]
pub struct Protocol {
    config: ProtocolConfig,
    basis: SpinBasis,
    ops: JointOps,
    kraus: KrausPair,
    frame: LocalRotation,
    feedback: LocalRotation,
    /// Factors of `exp(−iΩ Jx⁻)`.
    frame_factors: (DMatrix<C64>, DMatrix<C64>),
    /// `m₊ᵢ m₊ⱼ* + m₋ᵢ m₋ⱼ*`, the no-detection channel in the Jz⁺ basis.
    dephasing: DMatrix<C64>,
    jz_plus_diag: Vec<f64>,
}

impl Protocol {
    pub fn new(config: ProtocolConfig) -> Result<Self> {
        config.validate()?;
        let basis = SpinBasis::new(config.n_atoms)?;
        let ops = build_joint_ops(&basis)?;
        let kraus = kraus_pair(&basis, config.chi);
        let frame = LocalRotation::new(&ops.jx_minus)?;
        let feedback = LocalRotation::new(&ops.jy_plus)?;
        let frame_factors = frame.factors(-config.omega());
        let dim = basis.joint_dim();
        let (mp, mm) = (kraus.plus_diag(), kraus.minus_diag());
        let dephasing =
            DMatrix::from_fn(dim, dim, |i, j| mp[i] * mp[j].conj() + mm[i] * mm[j].conj());
        let jz_plus_diag = (0..dim).map(|j| ops.jz_plus.matrix()[(j, j)].re).collect();
        Ok(Self {
            config,
            basis,
            ops,
            kraus,
            frame,
            feedback,
            frame_factors,
            dephasing,
            jz_plus_diag,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn basis(&self) -> &SpinBasis {
        &self.basis
    }

    pub fn ops(&self) -> &JointOps {
        &self.ops
    }

    pub fn kraus(&self) -> &KrausPair {
        &self.kraus
    }

    pub fn frame_rotation(&self) -> &LocalRotation {
        &self.frame
    }

    pub fn feedback_rotation(&self) -> &LocalRotation {
        &self.feedback
    }

    pub fn initial_state(&self) -> QuantumState {
        initial_state(&self.basis)
    }

    fn check_dim(&self, state: &QuantumState) -> Result<()> {
        if state.dim() != self.basis.joint_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.joint_dim(),
                found: state.dim(),
            });
        }
        Ok(())
    }

    /// `Tr[M ρ M†]` for a diagonal Kraus operator.
    fn branch_weight(&self, state: &QuantumState, which: Detection) -> f64 {
        let m = self.kraus.diag(which);
        match state {
            QuantumState::Pure(v) => v
                .iter()
                .zip(m)
                .map(|(a, k)| a.norm_sqr() * k.norm_sqr())
                .sum(),
            QuantumState::Mixed(r) => (0..r.nrows()).map(|j| r[(j, j)].re * m[j].norm_sqr()).sum(),
        }
    }

    pub fn step_probabilities(&self, state: &QuantumState) -> Result<Probabilities> {
        self.check_dim(state)?;
        state.ensure_normalized()?;
        let eta = self.config.eta;
        Ok(Probabilities {
            plus: eta * self.branch_weight(state, Detection::Plus),
            minus: eta * self.branch_weight(state, Detection::Minus),
            none: 1.0 - eta,
        })
    }

    /// `M ρ M†` without the frame rotation.
    fn kraus_branch(&self, state: &QuantumState, which: Detection) -> QuantumState {
        let m = self.kraus.diag(which);
        match state {
            QuantumState::Pure(v) => QuantumState::Pure(DVector::from_iterator(
                v.len(),
                v.iter().zip(m).map(|(a, k)| a * k),
            )),
            QuantumState::Mixed(r) => {
                let n = r.nrows();
                QuantumState::Mixed(DMatrix::from_fn(n, n, |i, j| {
                    m[i] * r[(i, j)] * m[j].conj()
                }))
            }
        }
    }

    fn rotate_frame(&self, state: &mut QuantumState) {
        let (a, b) = &self.frame_factors;
        state.apply_local_unitary(a, b);
    }

    /// `exp(−iΩJx⁻) M± ρ M±† exp(iΩJx⁻)`, trace `Tr[M± ρ M±†]`.
    pub fn apply_detection(&self, state: &QuantumState, which: Detection) -> Result<Unnormalized> {
        self.check_dim(state)?;
        state.ensure_normalized()?;
        let mut branch = self.kraus_branch(state, which);
        let trace = branch.trace();
        if trace < ZERO_BRANCH_TRACE {
            return Err(Error::ZeroProbabilityBranch {
                outcome: which.name(),
                trace,
            });
        }
        self.rotate_frame(&mut branch);
        Ok(Unnormalized(branch))
    }

    /// `exp(−iΩJx⁻) (M₊ρM₊† + M₋ρM₋†) exp(iΩJx⁻)`; always returns a density matrix.
    pub fn apply_no_detection(&self, state: &QuantumState) -> Result<QuantumState> {
        self.check_dim(state)?;
        let mut rho = state.to_density();
        rho.component_mul_assign(&self.dephasing);
        let mut out = QuantumState::Mixed(rho);
        self.rotate_frame(&mut out);
        Ok(out)
    }

    /// Exact angle from the unnormalized post-measurement, post-rotation state.
    pub fn feedback_angle_exact(&self, post: &Unnormalized) -> Result<f64> {
        self.check_dim(&post.0)?;
        let jz = self.jz_plus_mean(&post.0);
        let jx = self.trace_real(&post.0, &self.ops.jx_plus);
        exact_angle(jz, jx, post.trace())
    }

    /// Closed-form angle from the normalized pre-measurement state `ρ_n`.
    pub fn feedback_angle_approx(
        &self,
        state: &QuantumState,
        which: Detection,
        n: usize,
    ) -> Result<f64> {
        self.check_dim(state)?;
        let moments = self.angle_moments(state);
        approx_angle(
            which,
            &moments,
            self.config.chi,
            self.frame_angle(n),
            self.config.n_atoms,
        )
    }

    fn frame_angle(&self, n: usize) -> f64 {
        match self.config.frame_angle {
            FrameAngle::Incremental => self.config.omega(),
            FrameAngle::Accumulated => (n + 1) as f64 * self.config.omega(),
        }
    }

    pub fn angle_moments(&self, state: &QuantumState) -> AngleMoments {
        let z = &self.jz_plus_diag;
        match state {
            QuantumState::Pure(v) => {
                let psi = v.as_slice();
                let jz_plus_sq = psi
                    .iter()
                    .zip(z)
                    .map(|(a, zj)| a.norm_sqr() * zj * zj)
                    .sum();
                let y = self.ops.jy_minus.apply(psi);
                // 2 Re <Jy⁻ψ | Jz⁺ψ>
                let anticommutator = 2.0
                    * y.iter()
                        .zip(psi)
                        .zip(z)
                        .map(|((yj, a), zj)| (yj.conj() * a).re * zj)
                        .sum::<f64>();
                let x = self.ops.jx_plus.apply(psi);
                let jx_plus = psi.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
                AngleMoments {
                    jz_plus_sq,
                    anticommutator,
                    jx_plus,
                }
            }
            QuantumState::Mixed(r) => {
                let n = r.nrows();
                let jz_plus_sq = (0..n).map(|j| r[(j, j)].re * z[j] * z[j]).sum();
                let ym = self.ops.jy_minus.matrix();
                let mut anti = C64::default();
                for j in 0..n {
                    for i in 0..n {
                        let y = ym[(i, j)];
                        if y != C64::default() {
                            anti += y * (z[i] + z[j]) * r[(j, i)];
                        }
                    }
                }
                AngleMoments {
                    jz_plus_sq,
                    anticommutator: anti.re,
                    jx_plus: self.trace_real(state, &self.ops.jx_plus),
                }
            }
        }
    }

    fn jz_plus_mean(&self, state: &QuantumState) -> f64 {
        let z = &self.jz_plus_diag;
        match state {
            QuantumState::Pure(v) => v.iter().zip(z).map(|(a, zj)| a.norm_sqr() * zj).sum(),
            QuantumState::Mixed(r) => (0..r.nrows()).map(|j| r[(j, j)].re * z[j]).sum(),
        }
    }

    /// `Re Tr[A ρ]` using the tensor factors of `A`.
    fn trace_real(&self, state: &QuantumState, op: &crate::spin::CollectiveOperator) -> f64 {
        match (state, op.local()) {
            (QuantumState::Pure(v), _) => {
                let av = op.apply(v.as_slice());
                v.iter().zip(&av).map(|(a, b)| (a.conj() * b).re).sum()
            }
            (QuantumState::Mixed(_), Some(local)) => {
                let d = self.basis.single_dim();
                let r1 = state.reduce_first(d);
                let r2 = state.reduce_second(d);
                (local.first.component_mul(&r1.transpose()).sum()
                    + local.second.component_mul(&r2.transpose()).sum())
                .re
            }
            (QuantumState::Mixed(_), None) => state.trace_with(op.matrix()).re,
        }
    }

    /// Unitary conjugation by `exp(iλ Jy⁺)`.
    pub fn apply_feedback(&self, state: &QuantumState, lambda: f64) -> QuantumState {
        let mut out = state.clone();
        if lambda != 0.0 {
            let (a, b) = self.feedback.factors(lambda);
            out.apply_local_unitary(&a, &b);
        }
        out
    }

    /// Raw angle for a detection, before clamping; `Err` only when degenerate.
    fn raw_angle(
        &self,
        pre: &QuantumState,
        branch: &QuantumState,
        which: Detection,
        n: usize,
    ) -> Result<Option<f64>> {
        let Some(source) = self.config.policy.source() else {
            return Ok(None);
        };
        let lambda = match source {
            AngleSource::Approx => self.feedback_angle_approx(pre, which, n)?,
            AngleSource::Exact => {
                // moments of exp(−iΩJx⁻) σ exp(iΩJx⁻) via the rotated observables
                // Jz⁺ → Jz⁺cosΩ + Jy⁻sinΩ and Jx⁺ → Jx⁺
                let omega = self.config.omega();
                let jz = self.jz_plus_mean(branch) * omega.cos()
                    + self.trace_real(branch, &self.ops.jy_minus) * omega.sin();
                let jx = self.trace_real(branch, &self.ops.jx_plus);
                exact_angle(jz, jx, branch.trace())?
            }
        };
        Ok(Some(lambda))
    }

    /// One photon: sample the outcome from `draw ∈ [0, 1)`, update, feed back.
    pub fn step(
        &self,
        state: &QuantumState,
        n: usize,
        draw: f64,
    ) -> Result<(QuantumState, StepOutcome)> {
        self.step_scaled(state, n, draw, 1.0)
    }

    /// As [`Protocol::step`], with the applied angle multiplied by `lambda_scale`.
    pub fn step_scaled(
        &self,
        state: &QuantumState,
        n: usize,
        draw: f64,
        lambda_scale: f64,
    ) -> Result<(QuantumState, StepOutcome)> {
        let probs = self.step_probabilities(state)?;
        let kind = probs.sample(draw);
        let probability = probs.of(kind);
        let Some(which) = kind.detection() else {
            let next = self.apply_no_detection(state)?.normalized();
            return Ok((
                next,
                StepOutcome {
                    kind,
                    probability,
                    lambda_applied: 0.0,
                    degenerate: false,
                },
            ));
        };

        let mut branch = self.kraus_branch(state, which);
        let trace = branch.trace();
        if trace < ZERO_BRANCH_TRACE {
            return Err(Error::ZeroProbabilityBranch {
                outcome: which.name(),
                trace,
            });
        }
        let (raw, degenerate) = match self.raw_angle(state, &branch, which, n) {
            Ok(lambda) => (lambda.unwrap_or(0.0), false),
            Err(Error::DegenerateDenominator { value }) => {
                log::debug!(
                    "step {n}: degenerate feedback denominator {value:.3e}, lambda set to 0"
                );
                (0.0, true)
            }
            Err(e) => return Err(e),
        };
        let lambda = match self.config.policy.mode {
            FeedbackMode::Adiabatic => adiabatic_clamp(raw, n, &self.config.policy),
            _ => raw,
        } * lambda_scale;

        let (ra, rb) = &self.frame_factors;
        if lambda == 0.0 {
            branch.apply_local_unitary(ra, rb);
        } else {
            let (fa, fb) = self.feedback.factors(lambda);
            branch.apply_local_unitary(&(fa * ra), &(fb * rb));
        }
        Ok((
            branch.normalized(),
            StepOutcome {
                kind,
                probability,
                lambda_applied: lambda,
                degenerate,
            },
        ))
    }
}
