//! Stage I: choose dominant interferers, align them away by leakage
//! minimization, then remove intra-cell interference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{AlignmentSet, Pair};
use crate::linalg::{condition_number, hermitian_eigen_ascending, normalized, random_orthonormal, CMat, CVec, C64};
use crate::net_model::{ChannelSet, ClusterDims, UserId};

/// Transmit and receive vectors for every user in the cluster, stored in flat
/// user order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    dims: ClusterDims,
    tx: Vec<CVec>,
    rx: Vec<CVec>,
}

impl BeamformerSet {
    pub fn new(dims: &ClusterDims, tx: Vec<CVec>, rx: Vec<CVec>) -> Result<Self> {
        let users = dims.num_users();
        if tx.len() != users || rx.len() != users {
            return Err(Error::Dims(format!("need {users} transmit and receive vectors")));
        }
        if tx.iter().any(|v| v.len() != dims.tx_antennas()) || rx.iter().any(|u| u.len() != dims.rx_antennas()) {
            return Err(Error::Dims("beamformer length does not match antenna counts".into()));
        }
        Ok(Self { dims: dims.clone(), tx, rx })
    }

    pub fn dims(&self) -> &ClusterDims {
        &self.dims
    }

    pub fn tx(&self, user: UserId) -> &CVec {
        &self.tx[self.dims.flat(user)]
    }

    pub fn rx(&self, user: UserId) -> &CVec {
        &self.rx[self.dims.flat(user)]
    }

    pub fn set_tx(&mut self, user: UserId, v: CVec) {
        let i = self.dims.flat(user);
        self.tx[i] = v;
    }

    pub fn set_rx(&mut self, user: UserId, u: CVec) {
        let i = self.dims.flat(user);
        self.rx[i] = u;
    }

    /// `N x K_g` matrix whose columns are the transmit vectors of cell `cell`.
    pub fn cell_tx(&self, cell: usize) -> CMat {
        let cols: Vec<CVec> = (0..self.dims.users_in(cell)).map(|k| self.tx(UserId::new(cell, k)).clone()).collect();
        CMat::from_columns(&cols)
    }

    pub fn set_cell_tx(&mut self, cell: usize, v: &CMat) {
        for k in 0..self.dims.users_in(cell) {
            self.set_tx(UserId::new(cell, k), v.column(k).into_owned());
        }
    }

    pub fn bs_power(&self, cell: usize) -> f64 {
        (0..self.dims.users_in(cell)).map(|k| self.tx(UserId::new(cell, k)).norm_squared()).sum()
    }

    pub fn user_power(&self, user: UserId) -> f64 {
        self.tx(user).norm_squared()
    }

    /// Copy with every transmit vector rescaled to `p_max / K_g` power.
    pub fn with_equal_power(&self, p_max: f64) -> Self {
        let mut out = self.clone();
        for user in self.dims.users() {
            let share = (p_max / self.dims.users_in(user.cell) as f64).sqrt();
            out.set_tx(user, normalized(self.tx(user)) * C64::new(share, 0.0));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tx.iter().chain(&self.rx).all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

/// Largest `q` satisfying the sufficient condition `M + N >= K (q + 1) + 1`.
pub fn compute_q(rx_antennas: usize, tx_antennas: usize, users_per_cell: usize) -> usize {
    assert!(users_per_cell >= 1, "need at least one user per cell");
    ((rx_antennas + tx_antennas - 1) / users_per_cell).saturating_sub(1)
}

/// Dominance score of BS `bs` at `user` with all-ones probe beamformers.
pub fn interference_power(channels: &ChannelSet, bs: usize, user: UserId) -> f64 {
    let total: C64 = channels.h(bs, user).iter().sum();
    channels.dims.users_in(bs) as f64 * total.norm_sqr()
}

/// Each user picks its `q` strongest out-of-cell BSs; every BS column is then
/// pruned to its `K_i q` strongest pairs. Ties go to the lower index.
pub fn select_interferers(channels: &ChannelSet, q: usize) -> AlignmentSet {
    let dims = &channels.dims;
    let mut chosen: Vec<(Pair, f64)> = Vec::new();
    for user in dims.users() {
        let mut ranked: Vec<(usize, f64)> = (0..dims.cells())
            .filter(|&bs| bs != user.cell)
            .map(|bs| (bs, interference_power(channels, bs, user)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        chosen.extend(ranked.into_iter().take(q).map(|(bs, p)| (Pair::new(bs, user), p)));
    }
    let mut set = AlignmentSet::new();
    for bs in 0..dims.cells() {
        let mut column: Vec<(Pair, f64)> = chosen.iter().copied().filter(|(p, _)| p.bs == bs).collect();
        column.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.user.cmp(&b.0.user)));
        for (pair, _) in column.into_iter().take(dims.users_in(bs) * q) {
            set.insert(dims, pair).expect("selected pairs are inter-cell and in range");
        }
    }
    set
}

/// Total power of nulled interference, measured with unit-norm transmit vectors.
pub fn leakage(channels: &ChannelSet, beams: &BeamformerSet, set: &AlignmentSet) -> f64 {
    let dims = &channels.dims;
    set.iter()
        .map(|p| {
            let u = beams.rx(p.user);
            let hu = channels.h(p.bs, p.user).adjoint() * u;
            (0..dims.users_in(p.bs))
                .map(|j| hu.dotc(&normalized(beams.tx(UserId::new(p.bs, j)))).norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IaOptions {
    /// Stop when the relative leakage change falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IaOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct IaSolution {
    pub beams: BeamformerSet,
    /// Leakage before the first transmit update, then after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl IaSolution {
    pub fn leakage(&self) -> f64 {
        *self.trace.last().unwrap_or(&0.0)
    }

    pub fn relative_leakage(&self) -> f64 {
        match self.trace.first() {
            Some(&l0) if l0 > 0.0 => self.leakage() / l0,
            _ => 0.0,
        }
    }
}

/// Seeded random orthonormal transmit matrices with matched-filter receivers.
pub fn initial_beamformers(channels: &ChannelSet, seed: u64) -> BeamformerSet {
    let dims = &channels.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tx = Vec::with_capacity(dims.num_users());
    for g in 0..dims.cells() {
        let v = random_orthonormal(&mut rng, dims.tx_antennas(), dims.users_in(g));
        tx.extend(v.column_iter().map(|c| c.into_owned()));
    }
    let rx = dims.users().map(|u| matched_filter(channels, u, &tx[dims.flat(u)])).collect();
    BeamformerSet { dims: dims.clone(), tx, rx }
}

fn matched_filter(channels: &ChannelSet, user: UserId, v: &CVec) -> CVec {
    let y = channels.h(user.cell, user) * v;
    if y.norm() > 0.0 {
        normalized(&y)
    } else {
        let mut e = CVec::zeros(y.len());
        e[0] = C64::new(1.0, 0.0);
        e
    }
}

/// Interference covariance at `user` from the BSs it must null.
fn receiver_cost(channels: &ChannelSet, beams: &BeamformerSet, set: &AlignmentSet, user: UserId) -> CMat {
    let m = channels.dims.rx_antennas();
    let mut q = CMat::zeros(m, m);
    for p in set.iter().filter(|p| p.user == user) {
        let hv = channels.h(p.bs, user) * beams.cell_tx(p.bs);
        q += &hv * hv.adjoint();
    }
    q
}

/// Leakage a BS causes at the receivers it must null, as a quadratic form.
fn transmitter_cost(channels: &ChannelSet, beams: &BeamformerSet, set: &AlignmentSet, bs: usize) -> CMat {
    let n = channels.dims.tx_antennas();
    let mut q = CMat::zeros(n, n);
    for p in set.iter().filter(|p| p.bs == bs) {
        let hu = channels.h(bs, p.user).adjoint() * beams.rx(p.user);
        q += &hu * hu.adjoint();
    }
    q
}

fn ensure_finite(channels: &ChannelSet) -> Result<()> {
    let dims = &channels.dims;
    let bad = (0..dims.cells())
        .flat_map(|bs| dims.users().map(move |u| (bs, u)))
        .any(|(bs, u)| channels.h(bs, u).iter().any(|z| !z.re.is_finite() || !z.im.is_finite()));
    if bad {
        return Err(Error::NonFinite { what: "channel", iteration: 0 });
    }
    Ok(())
}

/// Leakage relative to the start below which the nulls count as exact.
pub const ALIGNED_FLOOR: f64 = 1e-24;

/// Alternating leakage minimization over the pairs in `set`.
///
/// Receivers and transmitters are updated in turn, each step a set of
/// independent smallest-eigenvector problems that only read the previous
/// iterate. BSs without pairs keep their random start and users without pairs
/// keep a matched filter.
pub fn solve_partial_ia(channels: &ChannelSet, set: &AlignmentSet, opts: IaOptions, seed: u64) -> Result<IaSolution> {
    ensure_finite(channels)?;
    let dims = channels.dims.clone();
    let mut beams = initial_beamformers(channels, seed);
    if set.is_empty() {
        return Ok(IaSolution { beams, trace: vec![0.0], iterations: 0 });
    }
    let users: Vec<UserId> = set.users().into_iter().collect();
    let bss: Vec<usize> = set.base_stations().into_iter().collect();

    let update_receivers = |beams: &mut BeamformerSet| {
        let fresh: Vec<CVec> = users
            .iter()
            .map(|&u| hermitian_eigen_ascending(&receiver_cost(channels, beams, set, u)).1.column(0).into_owned())
            .collect();
        for (&u, r) in users.iter().zip(fresh) {
            beams.set_rx(u, r);
        }
    };
    let update_transmitters = |beams: &mut BeamformerSet| {
        let fresh: Vec<CMat> = bss
            .iter()
            .map(|&bs| {
                let (_, vecs) = hermitian_eigen_ascending(&transmitter_cost(channels, beams, set, bs));
                vecs.columns(0, dims.users_in(bs)).into_owned()
            })
            .collect();
        for (&bs, v) in bss.iter().zip(fresh) {
            beams.set_cell_tx(bs, &v);
        }
    };

    update_receivers(&mut beams);
    let mut trace = vec![leakage(channels, &beams, set)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let prev = *trace.last().unwrap();
        if prev <= ALIGNED_FLOOR * trace[0] {
            break;
        }
        update_transmitters(&mut beams);
        update_receivers(&mut beams);
        iterations += 1;
        let now = leakage(channels, &beams, set);
        if !now.is_finite() {
            return Err(Error::NonFinite { what: "leakage", iteration: iterations });
        }
        trace.push(now);
        if (prev - now).abs() / prev < opts.tol {
            break;
        }
    }
    // users outside the set were never touched; refresh their matched filters
    for user in dims.users().filter(|u| !users.contains(u)) {
        let mf = matched_filter(channels, user, beams.tx(user));
        beams.set_rx(user, mf);
    }
    Ok(IaSolution { beams, trace, iterations })
}

/// Condition number above which a cell's effective matrix counts as singular.
pub const MAX_INTRACELL_CONDITION: f64 = 1e12;

/// `[A_g]_{kj} = u_gk^H H_(g,gk) v_gj`
pub fn intracell_matrix(channels: &ChannelSet, beams: &BeamformerSet, cell: usize) -> CMat {
    let k = channels.dims.users_in(cell);
    let v = beams.cell_tx(cell);
    let mut a = CMat::zeros(k, k);
    for row in 0..k {
        let user = UserId::new(cell, row);
        let uh = beams.rx(user).adjoint() * channels.h(cell, user) * &v;
        a.set_row(row, &uh.row(0));
    }
    a
}

/// Zero-forces intra-cell interference by mixing each BS's own columns:
/// `V_g <- V_g A_g^{-1}`, then unit-norm columns.
pub fn cancel_intracell(channels: &ChannelSet, beams: &BeamformerSet) -> Result<BeamformerSet> {
    let mut out = beams.clone();
    for cell in 0..channels.dims.cells() {
        let a = intracell_matrix(channels, beams, cell);
        let condition = condition_number(&a);
        if !(condition <= MAX_INTRACELL_CONDITION) {
            return Err(Error::DegenerateDrop { cell, condition });
        }
        let inv = a.try_inverse().ok_or(Error::DegenerateDrop { cell, condition })?;
        let mut v = beams.cell_tx(cell) * inv;
        for mut col in v.column_iter_mut() {
            let n = col.norm();
            col /= C64::new(n, 0.0);
        }
        out.set_cell_tx(cell, &v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::check_corollary1;

    fn dims(g: usize, k: usize, m: usize, n: usize) -> ClusterDims {
        ClusterDims::uniform(g, k, m, n).unwrap()
    }

    #[test]
    fn q_from_antenna_budget() {
        assert_eq!(compute_q(3, 4, 2), 2);
        assert_eq!(compute_q(5, 6, 4), 1);
        assert_eq!(compute_q(4, 4, 4), 0);
        assert_eq!(compute_q(1, 1, 3), 0);
    }

    #[test]
    fn q_is_the_largest_sufficient_value() {
        for m in 1..6 {
            for n in 1..6 {
                for k in 1..=n {
                    let g = 12;
                    let q = compute_q(m, n, k);
                    let d = dims(g, k, m, n);
                    if m + n > k {
                        assert!(check_corollary1(&d, q).unwrap(), "m={m} n={n} k={k}");
                    }
                    assert!(!check_corollary1(&d, q + 1).unwrap(), "m={m} n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn probe_power_is_scaled_entry_sum() {
        let d = dims(2, 3, 2, 3);
        let zero = ChannelSet::from_links(d.clone(), vec![vec![CMat::zeros(2, 3); 6]; 2], 1.0, vec![0.0; 6], 1.0).unwrap();
        assert_eq!(interference_power(&zero, 1, UserId::new(0, 0)), 0.0);

        let ch = ChannelSet::iid_rayleigh(&d, 4);
        let u = UserId::new(0, 2);
        let h = ch.h(1, u);
        let mut s = C64::new(0.0, 0.0);
        for r in 0..2 {
            for c in 0..3 {
                s += h[(r, c)];
            }
        }
        assert!((interference_power(&ch, 1, u) - 3.0 * s.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn selection_extremes() {
        let d = dims(3, 2, 3, 4);
        let ch = ChannelSet::iid_rayleigh(&d, 8);
        assert!(select_interferers(&ch, 0).is_empty());
        assert_eq!(select_interferers(&ch, 2), AlignmentSet::all(&d));
    }

    #[test]
    fn pruning_keeps_strongest_pair() {
        // cells 1 and 2 hold two users each, BS 3 serves one user so its cap is 1
        let d = ClusterDims::new(vec![2, 2, 1], 1, 2).unwrap();
        let scalar = |x: f64| CMat::from_element(1, 2, C64::new(x, 0.0));
        let mut links = vec![vec![scalar(0.01); 5]; 3];
        for (flat, amp) in [(0, 1.0), (1, 3.0), (2, 2.0), (3, 0.5)] {
            links[2][flat] = scalar(amp);
        }
        let ch = ChannelSet::from_links(d.clone(), links, 1.0, vec![0.0; 5], 1.0).unwrap();
        let set = select_interferers(&ch, 1);
        let at_bs3: Vec<Pair> = set.iter().copied().filter(|p| p.bs == 2).collect();
        assert_eq!(at_bs3, vec![Pair::new(2, UserId::new(0, 1))]);
    }

    #[test]
    fn leakage_matches_double_sum() {
        let d = dims(3, 2, 2, 3);
        let ch = ChannelSet::iid_rayleigh(&d, 1);
        let beams = initial_beamformers(&ch, 2);
        let set = AlignmentSet::all(&d);
        let mut want = 0.0;
        for p in set.iter() {
            for j in 0..2 {
                let v = beams.tx(UserId::new(p.bs, j));
                let u = beams.rx(p.user);
                let mut acc = C64::new(0.0, 0.0);
                for r in 0..2 {
                    for c in 0..3 {
                        acc += u[r].conj() * ch.h(p.bs, p.user)[(r, c)] * v[c];
                    }
                }
                want += acc.norm_sqr() / v.norm_squared();
            }
        }
        assert!((leakage(&ch, &beams, &set) - want).abs() < 1e-10 * want);
        assert_eq!(leakage(&ch, &beams, &AlignmentSet::new()), 0.0);
    }

    #[test]
    fn full_alignment_at_proper_boundary() {
        let d = dims(3, 2, 3, 4);
        let ch = ChannelSet::iid_rayleigh(&d, 11);
        let set = AlignmentSet::all(&d);
        let sol = solve_partial_ia(&ch, &set, IaOptions::default(), 5).unwrap();
        assert!(sol.relative_leakage() <= 1e-6, "relative leakage {}", sol.relative_leakage());
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for user in d.users() {
            assert!((sol.beams.rx(user).norm() - 1.0).abs() < 1e-12);
        }
        for g in 0..3 {
            let s = crate::linalg::singular_values(&sol.beams.cell_tx(g));
            assert!(*s.last().unwrap() > 1e-8);
        }
    }

    #[test]
    fn empty_set_returns_initialization() {
        let d = dims(3, 2, 3, 4);
        let ch = ChannelSet::iid_rayleigh(&d, 3);
        let sol = solve_partial_ia(&ch, &AlignmentSet::new(), IaOptions::default(), 9).unwrap();
        assert_eq!(sol.beams, initial_beamformers(&ch, 9));
        assert_eq!(sol.leakage(), 0.0);
    }

    #[test]
    fn intracell_cancellation_diagonalizes_and_keeps_nulls() {
        let d = dims(3, 2, 3, 4);
        let ch = ChannelSet::iid_rayleigh(&d, 21);
        let set = AlignmentSet::all(&d);
        let sol = solve_partial_ia(&ch, &set, IaOptions::default(), 1).unwrap();
        let before = intracell_matrix(&ch, &sol.beams, 0);
        assert!(before[(0, 1)].norm() > 1e-6);
        let out = cancel_intracell(&ch, &sol.beams).unwrap();
        for g in 0..3 {
            let a = intracell_matrix(&ch, &out, g);
            let scale = a.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(a[(0, 1)].norm() <= 1e-10 * scale && a[(1, 0)].norm() <= 1e-10 * scale);
        }
        let (l0, l1) = (leakage(&ch, &sol.beams, &set), leakage(&ch, &out, &set));
        assert!((l0 - l1).abs() <= 1e-10 * l0.max(1.0));
    }

    #[test]
    fn diagonal_cell_only_rescales() {
        let d = dims(1, 2, 2, 2);
        let eye = CMat::identity(2, 2);
        let ch = ChannelSet::from_links(d.clone(), vec![vec![eye.clone(), eye.clone()]], 1.0, vec![0.0; 2], 1.0).unwrap();
        let e = |i: usize| {
            let mut v = CVec::zeros(2);
            v[i] = C64::new(1.0, 0.0);
            v
        };
        let beams = BeamformerSet::new(&d, vec![e(0) * C64::new(2.0, 0.0), e(1)], vec![e(0), e(1)]).unwrap();
        let out = cancel_intracell(&ch, &beams).unwrap();
        assert!((out.tx(UserId::new(0, 0)) - e(0)).norm() < 1e-14);
        assert!((out.tx(UserId::new(0, 1)) - e(1)).norm() < 1e-14);
    }

    #[test]
    fn singular_cell_is_degenerate() {
        let d = dims(1, 2, 2, 2);
        let eye = CMat::identity(2, 2);
        let ch = ChannelSet::from_links(d.clone(), vec![vec![eye.clone(), eye]], 1.0, vec![0.0; 2], 1.0).unwrap();
        let mut v = CVec::zeros(2);
        v[0] = C64::new(1.0, 0.0);
        let beams = BeamformerSet::new(&d, vec![v.clone(), v.clone()], vec![v.clone(), v]).unwrap();
        assert!(matches!(cancel_intracell(&ch, &beams), Err(Error::DegenerateDrop { cell: 0, .. })));
    }
}
