//! Stage II: per-BS power constrained beamformer optimization.
//!
//! Both utilities run on the SNR-normalized system (unit noise, unit budget)
//! and hand back transmit vectors in the caller's power units.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::alignment::{initial_beamformers, BeamformerSet};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen_ascending, normalized, CMat, CVec, C64};
use crate::net_model::{ChannelSet, UserId};

/// `log2(1 + sinr / gap)` with a linear gap.
pub fn rate(sinr: f64, gap: f64) -> f64 {
    (1.0 + sinr / gap).log2()
}

/// Signal to interference-plus-noise ratio of `user`, counting every other
/// stream in the cluster (intra-cell included) as interference.
pub fn sinr(channels: &ChannelSet, beams: &BeamformerSet, user: UserId) -> f64 {
    let dims = &channels.dims;
    let u = beams.rx(user);
    let un2 = u.norm_squared();
    if un2 == 0.0 {
        return 0.0;
    }
    let mut signal = 0.0;
    let mut interference = 0.0;
    for bs in 0..dims.cells() {
        let row = u.adjoint() * channels.h(bs, user);
        for j in 0..dims.users_in(bs) {
            let stream = UserId::new(bs, j);
            let p = (&row * beams.tx(stream))[0].norm_sqr();
            if stream == user {
                signal = p;
            } else {
                interference += p;
            }
        }
    }
    signal / (channels.noise_of(user) * un2 + interference)
}

pub fn all_sinrs(channels: &ChannelSet, beams: &BeamformerSet) -> Vec<f64> {
    channels.dims.users().map(|u| sinr(channels, beams, u)).collect()
}

/// Interference-plus-noise covariance at `user`.
fn interference_covariance(channels: &ChannelSet, beams: &BeamformerSet, user: UserId) -> CMat {
    let dims = &channels.dims;
    let m = dims.rx_antennas();
    let mut j = CMat::identity(m, m) * C64::new(channels.noise_of(user), 0.0);
    for stream in dims.users().filter(|&s| s != user) {
        let hv = channels.h(stream.cell, user) * beams.tx(stream);
        j += &hv * hv.adjoint();
    }
    j
}

/// Unnormalized MMSE filter `J^{-1} H v` (with `J` the full received
/// covariance) and its MSE, evaluated as `1 / (1 + SINR)` to stay accurate
/// at high SNR.
fn mmse_filter(channels: &ChannelSet, beams: &BeamformerSet, user: UserId) -> (CVec, f64) {
    let jn = interference_covariance(channels, beams, user);
    let hv = channels.h(user.cell, user) * beams.tx(user);
    let z = jn.cholesky().expect("noise keeps the covariance positive definite").solve(&hv);
    let s = hv.dotc(&z).re.max(0.0);
    (z / C64::new(1.0 + s, 0.0), 1.0 / (1.0 + s))
}

/// Unit-norm MMSE receivers for the current transmit vectors.
pub fn mmse_receivers(channels: &ChannelSet, beams: &BeamformerSet) -> BeamformerSet {
    let mut out = beams.clone();
    for user in channels.dims.users() {
        let (u, _) = mmse_filter(channels, beams, user);
        let u = if u.norm() > 0.0 { normalized(&u) } else { beams.rx(user).clone() };
        out.set_rx(user, u);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityResult {
    /// Transmit vectors carry power; receivers have unit norm.
    #[serde(skip)]
    pub beams: Option<BeamformerSet>,
    pub per_user_sinr: Vec<f64>,
    /// Sum-rate (gap-free, b/s/Hz) or minimum SINR per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl UtilityResult {
    fn new(channels: &ChannelSet, beams: BeamformerSet, objective_trace: Vec<f64>, iterations: usize) -> Self {
        let per_user_sinr = all_sinrs(channels, &beams);
        Self { beams: Some(beams), per_user_sinr, objective_trace, iterations }
    }

    pub fn beams(&self) -> &BeamformerSet {
        self.beams.as_ref().expect("solver results always carry beamformers")
    }

    pub fn per_user_rate(&self, gap: f64) -> Vec<f64> {
        self.per_user_sinr.iter().map(|&s| rate(s, gap)).collect()
    }

    pub fn min_rate(&self, gap: f64) -> f64 {
        self.per_user_rate(gap).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_rate(&self, gap: f64) -> f64 {
        self.per_user_rate(gap).iter().sum()
    }
}

fn to_normalized_units(channels: &ChannelSet, beams: &BeamformerSet) -> BeamformerSet {
    scale_tx(beams, 1.0 / channels.p_max.sqrt())
}

fn scale_tx(beams: &BeamformerSet, factor: f64) -> BeamformerSet {
    let mut out = beams.clone();
    for user in beams.dims().users() {
        out.set_tx(user, beams.tx(user) * C64::new(factor, 0.0));
    }
    out
}

/// Rescales any BS over budget back onto it.
fn clip_power(beams: &BeamformerSet, p_max: f64) -> BeamformerSet {
    let mut out = beams.clone();
    for g in 0..beams.dims().cells() {
        let p = beams.bs_power(g);
        if p > p_max {
            out.set_cell_tx(g, &(beams.cell_tx(g) * C64::new((p_max / p).sqrt(), 0.0)));
        }
    }
    out
}

fn check_finite(beams: &BeamformerSet, what: &'static str, iteration: usize) -> Result<()> {
    if beams.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, iteration })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmmseOptions {
    pub max_iter: usize,
    /// Relative sum-rate change that ends the iteration.
    pub tol: f64,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self { max_iter: 5000, tol: 1e-9 }
    }
}

fn sum_rate_with_mmse(channels: &ChannelSet, beams: &BeamformerSet) -> f64 {
    let rx = mmse_receivers(channels, beams);
    all_sinrs(channels, &rx).into_iter().map(|s| rate(s, 1.0)).sum()
}

/// Smallest `mu >= 0` with `sum_n c_n / (lambda_n + mu)^2 <= budget`.
fn power_multiplier(eigenvalues: &[f64], weights: &[f64], budget: f64) -> f64 {
    let power = |mu: f64| -> f64 {
        eigenvalues.iter().zip(weights).map(|(&l, &c)| if c == 0.0 { 0.0 } else { c / (l + mu).powi(2) }).sum()
    };
    if eigenvalues.iter().all(|&l| l > 0.0) && power(0.0) <= budget {
        return 0.0;
    }
    let total: f64 = weights.iter().sum();
    let mut hi = (total / budget).sqrt().max(f64::MIN_POSITIVE);
    while power(hi) > budget {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if power(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn wmmse_step(channels: &ChannelSet, beams: &BeamformerSet) -> BeamformerSet {
    let dims = &channels.dims;
    let n = dims.tx_antennas();
    let filters: Vec<(CVec, f64)> = dims.users().map(|u| mmse_filter(channels, beams, u)).collect();
    let weight = |user: UserId| 1.0 / filters[dims.flat(user)].1.max(f64::MIN_POSITIVE);
    let mut out = beams.clone();
    for g in 0..dims.cells() {
        let mut a = CMat::zeros(n, n);
        for victim in dims.users() {
            let hu = channels.h(g, victim).adjoint() * &filters[dims.flat(victim)].0;
            a += &hu * hu.adjoint() * C64::new(weight(victim), 0.0);
        }
        let own: Vec<CVec> = (0..dims.users_in(g))
            .map(|k| {
                let user = UserId::new(g, k);
                channels.h(g, user).adjoint() * &filters[dims.flat(user)].0 * C64::new(weight(user), 0.0)
            })
            .collect();
        let b = CMat::from_columns(&own);
        let (lambda, e) = hermitian_eigen_ascending(&a);
        let eb = e.adjoint() * &b;
        let weights: Vec<f64> = eb.row_iter().map(|r| r.norm_squared()).collect();
        let lambda: Vec<f64> = lambda.into_iter().map(|l| l.max(0.0)).collect();
        let mu = power_multiplier(&lambda, &weights, channels.p_max);
        let inv = CMat::from_diagonal(&CVec::from_iterator(
            n,
            lambda.iter().zip(&weights).map(|(&l, &c)| if c == 0.0 { C64::new(0.0, 0.0) } else { C64::new(1.0 / (l + mu), 0.0) }),
        ));
        out.set_cell_tx(g, &(&e * inv * eb));
    }
    out
}

/// Weighted-MMSE sum-rate maximization. The trace holds the gap-free sum-rate
/// under MMSE receivers, starting with the (power-clipped) initialization.
pub fn wmmse_sum_rate(channels: &ChannelSet, init: &BeamformerSet, opts: WmmseOptions) -> Result<UtilityResult> {
    let norm = channels.normalized();
    let mut beams = clip_power(&to_normalized_units(channels, init), 1.0);
    check_finite(&beams, "wmmse initialization", 0)?;
    let mut trace = vec![sum_rate_with_mmse(&norm, &beams)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = wmmse_step(&norm, &beams);
        iterations += 1;
        check_finite(&next, "wmmse transmit update", iterations)?;
        let r = sum_rate_with_mmse(&norm, &next);
        if !r.is_finite() {
            return Err(Error::NonFinite { what: "wmmse sum-rate", iteration: iterations });
        }
        beams = next;
        let prev = *trace.last().unwrap();
        trace.push(r);
        if (r - prev).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let beams = mmse_receivers(&norm, &beams);
    let beams = scale_tx(&beams, channels.p_max.sqrt());
    Ok(UtilityResult::new(channels, beams, trace, iterations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMinOptions {
    /// Relative width at which the bisection on `t` stops.
    pub eps: f64,
    /// Outer receiver/transmitter alternations.
    pub outer_iters: usize,
}

impl Default for MaxMinOptions {
    fn default() -> Self {
        Self { eps: 1e-4, outer_iters: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct FixedRxSolution {
    /// Transmit vectors achieving `t`, with the fixed receivers.
    pub beams: BeamformerSet,
    /// Largest SINR target certified feasible.
    pub t: f64,
    /// Upper end of the search interval.
    pub t_hi: f64,
    pub solves: usize,
}

/// Interference-free bound `min_k p_max |u_k^H H_(g,gk)|^2 / noise_k`; no
/// transmit design can push the minimum SINR above it.
pub fn sinr_upper_bound(channels: &ChannelSet, receivers: &BeamformerSet) -> f64 {
    channels
        .dims
        .users()
        .map(|user| {
            let u = normalized(receivers.rx(user));
            let c = u.adjoint() * channels.h(user.cell, user);
            channels.p_max * c.norm_squared() / channels.noise_of(user)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Layout of the conic program deciding whether every SINR can reach `t`.
///
/// Decision vector: `[tau, Re v_0, Im v_0, ..., Re v_{U-1}, Im v_{U-1}]`
/// (antenna-major inside each user). Minimizes `tau`, the largest per-BS
/// transmit norm, subject to the SINR targets.
struct SinrProgram<'a> {
    channels: &'a ChannelSet,
    /// `rows[bs][flat victim] = u^H H_(bs, victim) / sqrt(noise)`
    rows: Vec<Vec<CMat>>,
    receivers: BeamformerSet,
}

impl<'a> SinrProgram<'a> {
    fn new(channels: &'a ChannelSet, receivers: &BeamformerSet) -> Self {
        let dims = &channels.dims;
        let rows = (0..dims.cells())
            .map(|bs| {
                dims.users()
                    .map(|v| {
                        let u = normalized(receivers.rx(v));
                        let row = u.adjoint() * channels.h(bs, v) / C64::new(channels.noise_of(v).sqrt(), 0.0);
                        CMat::from_iterator(1, row.len(), row.iter().copied())
                    })
                    .collect()
            })
            .collect();
        Self { channels, rows, receivers: receivers.clone() }
    }

    fn var(&self, user: usize, antenna: usize) -> usize {
        1 + 2 * (user * self.channels.dims.tx_antennas() + antenna)
    }

    /// Appends `-Re(c v_user)` (or `-Im`) as row `r` of `A`.
    fn push_product(&self, a: &mut Triplets, r: usize, c: &CMat, user: usize, imag: bool, scale: f64) {
        for n in 0..c.ncols() {
            let (re, im) = (c[(0, n)].re * scale, c[(0, n)].im * scale);
            let (x, y) = (self.var(user, n), self.var(user, n) + 1);
            if imag {
                a.push(r, x, -im);
                a.push(r, y, -re);
            } else {
                a.push(r, x, -re);
                a.push(r, y, im);
            }
        }
    }

    /// `Some(V)` when a transmit design within the budget meets `t` (verified
    /// by direct SINR evaluation), `None` when not.
    fn solve(&self, t: f64, eps: f64) -> Option<BeamformerSet> {
        let dims = &self.channels.dims;
        let users = dims.num_users();
        let n = dims.tx_antennas();
        let nvar = 1 + 2 * users * n;
        let mut a = Triplets::default();
        let mut b = Vec::new();
        let mut cones = Vec::new();

        // Im(c_kk v_k) = 0
        for k in 0..users {
            let me = dims.user_at(k);
            self.push_product(&mut a, b.len(), &self.rows[me.cell][k], k, true, -1.0);
            b.push(0.0);
        }
        cones.push(SupportedConeT::ZeroConeT(users));

        // Re(c_kk v_k) / sqrt(t) >= || interference, 1 ||
        let inv_sqrt_t = 1.0 / t.sqrt();
        for k in 0..users {
            let me = dims.user_at(k);
            let start = b.len();
            self.push_product(&mut a, start, &self.rows[me.cell][k], k, false, inv_sqrt_t);
            b.push(0.0);
            for l in (0..users).filter(|&l| l != k) {
                let c = &self.rows[dims.user_at(l).cell][k];
                let r = b.len();
                self.push_product(&mut a, r, c, l, false, 1.0);
                self.push_product(&mut a, r + 1, c, l, true, 1.0);
                b.extend([0.0, 0.0]);
            }
            b.push(1.0);
            cones.push(SupportedConeT::SecondOrderConeT(b.len() - start));
        }

        // || vec V_g || <= tau
        for g in 0..dims.cells() {
            let start = b.len();
            a.push(start, 0, -1.0);
            b.push(0.0);
            for k in 0..dims.users_in(g) {
                let flat = dims.flat(UserId::new(g, k));
                for ant in 0..n {
                    let x = self.var(flat, ant);
                    a.push(b.len(), x, -1.0);
                    b.push(0.0);
                    a.push(b.len(), x + 1, -1.0);
                    b.push(0.0);
                }
            }
            cones.push(SupportedConeT::SecondOrderConeT(b.len() - start));
        }

        let p = CscMatrix::zeros((nvar, nvar));
        let mut q = vec![0.0; nvar];
        q[0] = 1.0;
        let a = a.into_csc(b.len(), nvar);
        let settings = DefaultSettings { verbose: false, max_iter: 200, ..Default::default() };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).ok()?;
        solver.solve();
        let status = solver.solution.status;
        match status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return None,
            SolverStatus::Solved | SolverStatus::AlmostSolved => {}
            other => log::debug!("conic solve at t = {t:.6e} ended with {other:?}"),
        }
        let x = &solver.solution.x;
        let tau = x[0];
        if !tau.is_finite() || tau > 1.0 + 1e-6 {
            return None;
        }
        let tx: Vec<CVec> = (0..users)
            .map(|l| CVec::from_iterator(n, (0..n).map(|ant| C64::new(x[self.var(l, ant)], x[self.var(l, ant) + 1]))))
            .collect();
        let rx = dims.users().map(|u| normalized(self.receivers.rx(u))).collect();
        let candidate = BeamformerSet::new(dims, tx, rx).ok()?;
        let candidate = clip_power(&candidate, self.channels.p_max);
        self.certify(&candidate, t, eps).then_some(candidate)
    }

    /// Direct check of the SINR targets (with the program's receivers) and the budget.
    fn certify(&self, tx: &BeamformerSet, t: f64, eps: f64) -> bool {
        let dims = &self.channels.dims;
        let budget_ok = (0..dims.cells()).all(|g| tx.bs_power(g) <= self.channels.p_max * (1.0 + 1e-6));
        budget_ok
            && dims.users().all(|user| {
                let k = dims.flat(user);
                let mut signal = 0.0;
                let mut interference = 0.0;
                for l in 0..dims.num_users() {
                    let other = dims.user_at(l);
                    let p = (&self.rows[other.cell][k] * tx.tx(other))[0].norm_sqr();
                    if l == k {
                        signal = p;
                    } else {
                        interference += p;
                    }
                }
                signal >= t * (1.0 - 10.0 * eps) * (1.0 + interference)
            })
    }
}

#[derive(Default)]
struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }

    fn into_csc(self, m: usize, n: usize) -> CscMatrix<f64> {
        CscMatrix::new_from_triplets(m, n, self.rows, self.cols, self.vals)
    }
}

fn with_receivers(tx: &BeamformerSet, receivers: &BeamformerSet) -> BeamformerSet {
    let mut out = tx.clone();
    for user in tx.dims().users() {
        out.set_rx(user, normalized(receivers.rx(user)));
    }
    out
}

/// Whether SINR target `t` is reachable for every user with the receivers of
/// `receivers` held fixed; returns a witnessing design in caller units.
pub fn sinr_target_feasible(channels: &ChannelSet, receivers: &BeamformerSet, t: f64, eps: f64) -> Option<BeamformerSet> {
    let norm = channels.normalized();
    SinrProgram::new(&norm, receivers)
        .solve(t, eps)
        .map(|v| scale_tx(&with_receivers(&v, receivers), channels.p_max.sqrt()))
}

/// Max-min SINR over transmit vectors for fixed receivers, by geometric
/// bisection on the common SINR target.
pub fn maxmin_fixed_rx(channels: &ChannelSet, receivers: &BeamformerSet, eps: f64) -> Result<FixedRxSolution> {
    maxmin_fixed_rx_from(channels, receivers, eps, None)
}

/// As [`maxmin_fixed_rx`], starting the search from a known transmit design
/// whose minimum SINR under `receivers` becomes the initial lower end.
pub fn maxmin_fixed_rx_from(
    channels: &ChannelSet,
    receivers: &BeamformerSet,
    eps: f64,
    start: Option<&BeamformerSet>,
) -> Result<FixedRxSolution> {
    let norm = channels.normalized();
    let program = SinrProgram::new(&norm, receivers);
    let t_hi = sinr_upper_bound(&norm, receivers);
    let mut solves = 0;
    let zero_tx = || {
        let mut out = receivers.clone();
        for user in channels.dims.users() {
            out.set_tx(user, CVec::zeros(channels.dims.tx_antennas()));
        }
        with_receivers(&out, receivers)
    };
    if !(t_hi > 0.0) {
        return Ok(FixedRxSolution { beams: zero_tx(), t: 0.0, t_hi, solves });
    }

    let warm = start.map(|s| {
        let v = clip_power(&to_normalized_units(channels, s), 1.0);
        let v = with_receivers(&v, receivers);
        let t = all_sinrs(&norm, &v).into_iter().fold(f64::INFINITY, f64::min);
        (t, v)
    });
    let (mut lo, mut best) = match warm {
        Some((t, v)) if t > 0.0 && t.is_finite() => (t.min(t_hi), v),
        _ => {
            let v = matched_transmit(&norm, receivers);
            let t = all_sinrs(&norm, &v).into_iter().fold(f64::INFINITY, f64::min);
            if t > 0.0 {
                (t.min(t_hi), v)
            } else {
                let t = t_hi * 1e-6;
                solves += 1;
                match program.solve(t, eps) {
                    Some(v) => (t, with_receivers(&v, receivers)),
                    None => return Err(Error::InnerSolver { t, reason: "no feasible starting point".into() }),
                }
            }
        }
    };
    let mut hi = t_hi;
    while hi > lo * (1.0 + eps) {
        let mid = (lo * hi).sqrt();
        solves += 1;
        match program.solve(mid, eps) {
            Some(v) => {
                lo = mid;
                best = with_receivers(&v, receivers);
            }
            None => hi = mid,
        }
    }
    check_finite(&best, "max-min transmit design", solves)?;
    Ok(FixedRxSolution { beams: scale_tx(&best, channels.p_max.sqrt()), t: lo, t_hi, solves })
}

/// Equal-power transmit vectors matched to each user's effective channel.
fn matched_transmit(channels: &ChannelSet, receivers: &BeamformerSet) -> BeamformerSet {
    let dims = &channels.dims;
    let mut out = receivers.clone();
    for user in dims.users() {
        let c = channels.h(user.cell, user).adjoint() * normalized(receivers.rx(user));
        let share = (channels.p_max / dims.users_in(user.cell) as f64).sqrt();
        out.set_tx(user, normalized(&c) * C64::new(share, 0.0));
    }
    with_receivers(&out, receivers)
}

fn min_sinr(channels: &ChannelSet, beams: &BeamformerSet) -> f64 {
    all_sinrs(channels, beams).into_iter().fold(f64::INFINITY, f64::min)
}

/// Alternates fixed-receiver max-min solves with MMSE receiver updates and
/// returns the best iterate. Iterate zero is `init`'s transmit vectors with
/// MMSE receivers; the first solve uses `init`'s receivers.
pub fn maxmin_alternate(channels: &ChannelSet, init: &BeamformerSet, opts: MaxMinOptions) -> Result<UtilityResult> {
    let start = clip_power(init, channels.p_max);
    check_finite(&start, "max-min initialization", 0)?;
    let mut best = mmse_receivers(channels, &start);
    let mut best_value = min_sinr(channels, &best);
    let mut trace = vec![best_value];
    let mut receivers = start.clone();
    let mut previous: Option<BeamformerSet> = None;
    for it in 1..=opts.outer_iters {
        let sol = maxmin_fixed_rx_from(channels, &receivers, opts.eps, previous.as_ref())?;
        let updated = mmse_receivers(channels, &sol.beams);
        check_finite(&updated, "max-min receiver update", it)?;
        let value = min_sinr(channels, &updated);
        trace.push(value);
        if value > best_value {
            best_value = value;
            best = updated.clone();
        }
        previous = Some(sol.beams);
        receivers = updated;
    }
    let iterations = opts.outer_iters;
    Ok(UtilityResult::new(channels, best, trace, iterations))
}

/// Seeded random start: orthonormal transmit vectors per cell with equal
/// power split and MMSE receivers.
pub fn random_init(channels: &ChannelSet, seed: u64) -> BeamformerSet {
    let v = initial_beamformers(channels, seed).with_equal_power(channels.p_max);
    mmse_receivers(channels, &v)
}
