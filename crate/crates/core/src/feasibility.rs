//! Feasibility of partial interference alignment.
//!
//! An [`AlignmentSet`] lists BS-user pairs `(i, (g,k))` whose interference
//! must be nulled: `u_gk^H H_(i,gk) v_ij = 0` for every stream `j` of BS `i`.
//! Feasibility is decided three ways:
//!
//! * the counting conditions ([`check_corollary1`], [`check_theorem1`],
//!   [`check_theorem2`]), which compare variables against equations over every
//!   subset of the nulling set;
//! * a numerical rank test on the Jacobian of the reduced polynomial map
//!   ([`jacobian_rank_oracle`]);
//! * a structural perfect-matching test on the Jacobian sparsity
//!   ([`hall_matching_exists`]).

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mix_seed, numerical_rank, random_cn_matrix, CMat};
use crate::net_model::{ClusterDims, UserId};

/// Interference from BS `bs` is to be nulled at `user`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub bs: usize,
    pub user: UserId,
}

impl Pair {
    pub fn new(bs: usize, user: UserId) -> Self {
        Self { bs, user }
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{}{})", self.bs + 1, self.user.cell + 1, self.user.index + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSet {
    pairs: BTreeSet<Pair>,
}

impl AlignmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(dims: &ClusterDims, pairs: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let mut set = Self::new();
        for p in pairs {
            set.insert(dims, p)?;
        }
        Ok(set)
    }

    /// Every inter-cell pair: full interference alignment.
    pub fn all(dims: &ClusterDims) -> Self {
        let pairs = (0..dims.cells())
            .flat_map(|bs| dims.users().filter(move |u| u.cell != bs).map(move |u| Pair::new(bs, u)))
            .collect();
        Self { pairs }
    }

    pub fn insert(&mut self, dims: &ClusterDims, pair: Pair) -> Result<bool> {
        if pair.bs >= dims.cells() || !dims.contains(pair.user) {
            return Err(Error::Dims(format!("pair {pair} is outside the cluster")));
        }
        if pair.bs == pair.user.cell {
            return Err(Error::Dims(format!("pair {pair} is intra-cell")));
        }
        Ok(self.pairs.insert(pair))
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.pairs.contains(pair)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter()
    }

    pub fn users(&self) -> BTreeSet<UserId> {
        self.pairs.iter().map(|p| p.user).collect()
    }

    pub fn base_stations(&self) -> BTreeSet<usize> {
        self.pairs.iter().map(|p| p.bs).collect()
    }

    /// Pairs nulled at each user (row counts of the selection matrix).
    pub fn per_user_counts(&self) -> BTreeMap<UserId, usize> {
        let mut m = BTreeMap::new();
        for p in &self.pairs {
            *m.entry(p.user).or_insert(0) += 1;
        }
        m
    }

    /// Users each BS must null at (column counts).
    pub fn per_bs_counts(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for p in &self.pairs {
            *m.entry(p.bs).or_insert(0) += 1;
        }
        m
    }

    /// Row cap `q` and column cap `K_i q` of the simple sufficient condition.
    pub fn within_caps(&self, dims: &ClusterDims, q: usize) -> bool {
        self.per_user_counts().values().all(|&c| c <= q)
            && self.per_bs_counts().iter().all(|(&bs, &c)| c <= dims.users_in(bs) * q)
    }

    pub fn subset(&self, keep: impl Fn(&Pair) -> bool) -> Self {
        Self { pairs: self.pairs.iter().copied().filter(|p| keep(p)).collect() }
    }
}

impl<'a> IntoIterator for &'a AlignmentSet {
    type Item = &'a Pair;
    type IntoIter = std::collections::btree_set::Iter<'a, Pair>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

/// Sufficient condition for nulling `q` interferers per user with uniform `K`.
pub fn check_corollary1(dims: &ClusterDims, q: usize) -> Result<bool> {
    let k = dims.uniform_users().ok_or_else(|| Error::NonUniformUsers(dims.users_per_cell().to_vec()))?;
    if q + 1 > dims.cells() {
        return Err(Error::Config(format!("q = {q} exceeds G - 1 = {}", dims.cells() - 1)));
    }
    let (m, n) = (dims.rx_antennas(), dims.tx_antennas());
    Ok(m >= 1 && n >= k && m + n > k * (q + 1))
}

/// Limits on the exhaustive subset search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCap {
    pub max_cells: usize,
    pub max_users: usize,
}

impl Default for EnumerationCap {
    fn default() -> Self {
        Self { max_cells: 8, max_users: 16 }
    }
}

/// A subset `J` of the nulling set with more equations than variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub users: Vec<UserId>,
    pub base_stations: Vec<usize>,
    /// Variables: `|J_users| (M-1) + sum_{l in J_BS} (N-K_l) K_l`.
    pub variables: usize,
    /// Equations: `sum_{(l,gk) in J} K_l`.
    pub equations: usize,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let users: Vec<String> = self.users.iter().map(|u| u.to_string()).collect();
        let bss: Vec<String> = self.base_stations.iter().map(|b| format!("BS{}", b + 1)).collect();
        write!(
            f,
            "users {{{}}} x BSs {{{}}}: {} variables < {} equations",
            users.join(","),
            bss.join(","),
            self.variables,
            self.equations
        )
    }
}

fn bs_variables(dims: &ClusterDims, bs: usize) -> usize {
    let k = dims.users_in(bs);
    (dims.tx_antennas() - k) * k
}

/// Searches for a violating subset over (user-subset, BS-subset) pairs.
///
/// For a fixed BS subset `B` the deficit `equations - variables` of the maximal
/// `J = I ∩ (B x U)` is a sum of independent per-user terms
/// `w_u(B) - (M-1)`, so the worst user subset is exactly the users with a
/// positive term. Only the `2^|B|` BS subsets are enumerated.
pub fn find_violation(dims: &ClusterDims, set: &AlignmentSet, cap: EnumerationCap) -> Result<Option<Violation>> {
    if dims.cells() > cap.max_cells || dims.num_users() > cap.max_users {
        return Err(Error::TooLarge(format!(
            "G = {} (cap {}), {} users (cap {})",
            dims.cells(),
            cap.max_cells,
            dims.num_users(),
            cap.max_users
        )));
    }
    let bss: Vec<usize> = set.base_stations().into_iter().collect();
    let users: Vec<UserId> = set.users().into_iter().collect();
    let user_slack = dims.rx_antennas() - 1;
    for mask in 1u64..(1u64 << bss.len()) {
        let chosen: Vec<usize> = (0..bss.len()).filter(|b| mask >> b & 1 == 1).map(|b| bss[b]).collect();
        let mut picked = Vec::new();
        for &u in &users {
            let weight: usize = chosen
                .iter()
                .filter(|&&bs| set.contains(&Pair::new(bs, u)))
                .map(|&bs| dims.users_in(bs))
                .sum();
            if weight > user_slack {
                picked.push(u);
            }
        }
        if picked.is_empty() {
            continue;
        }
        // shrink B to the BSs that actually appear in J
        let active: Vec<usize> = chosen
            .iter()
            .copied()
            .filter(|&bs| picked.iter().any(|&u| set.contains(&Pair::new(bs, u))))
            .collect();
        let equations: usize = active
            .iter()
            .map(|&bs| picked.iter().filter(|&&u| set.contains(&Pair::new(bs, u))).count() * dims.users_in(bs))
            .sum();
        let variables = picked.len() * user_slack + active.iter().map(|&bs| bs_variables(dims, bs)).sum::<usize>();
        if variables < equations {
            return Ok(Some(Violation { users: picked, base_stations: active, variables, equations }));
        }
    }
    Ok(None)
}

/// Necessary and sufficient condition for uniform `K`.
pub fn check_theorem1(dims: &ClusterDims, set: &AlignmentSet) -> Result<bool> {
    if dims.uniform_users().is_none() {
        return Err(Error::NonUniformUsers(dims.users_per_cell().to_vec()));
    }
    Ok(find_violation(dims, set, EnumerationCap::default())?.is_none())
}

/// Generalization to per-cell user counts `{K_g}`.
pub fn check_theorem2(dims: &ClusterDims, set: &AlignmentSet) -> Result<bool> {
    check_theorem2_with_cap(dims, set, EnumerationCap::default())
}

pub fn check_theorem2_with_cap(dims: &ClusterDims, set: &AlignmentSet, cap: EnumerationCap) -> Result<bool> {
    Ok(find_violation(dims, set, cap)?.is_none())
}

/// Variable layout of the reduced IA system: one `(M-1)` block per user in the
/// set and one `(N-K_i) x K_i` block per BS in the set.
struct ReducedSystem {
    equations: usize,
    variables: usize,
    bs_offset: BTreeMap<usize, usize>,
    user_offset: BTreeMap<UserId, usize>,
    /// `(pair, stream)` per equation row.
    rows: Vec<(Pair, usize)>,
}

impl ReducedSystem {
    fn new(dims: &ClusterDims, set: &AlignmentSet) -> Self {
        let m1 = dims.rx_antennas() - 1;
        let mut offset = 0;
        let mut bs_offset = BTreeMap::new();
        for bs in set.base_stations() {
            bs_offset.insert(bs, offset);
            offset += bs_variables(dims, bs);
        }
        let mut user_offset = BTreeMap::new();
        for u in set.users() {
            user_offset.insert(u, offset);
            offset += m1;
        }
        // equations grouped by BS, then stream, then pair
        let mut rows = Vec::new();
        for bs in set.base_stations() {
            for stream in 0..dims.users_in(bs) {
                rows.extend(set.iter().filter(|p| p.bs == bs).map(|&p| (p, stream)));
            }
        }
        Self { equations: rows.len(), variables: offset, bs_offset, user_offset, rows }
    }

    /// Column of `U_bar_i[p, stream]`.
    fn bs_var(&self, dims: &ClusterDims, bs: usize, p: usize, stream: usize) -> usize {
        self.bs_offset[&bs] + p * dims.users_in(bs) + stream
    }

    fn user_var(&self, user: UserId, m: usize) -> usize {
        self.user_offset[&user] + m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Largest allowed number of equations or variables.
    pub size_cap: usize,
    /// Independent draws; the verdict is the majority.
    pub trials: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { size_cap: 200, trials: 3 }
    }
}

/// Number of scalar equations and variables of the reduced system.
pub fn system_size(dims: &ClusterDims, set: &AlignmentSet) -> (usize, usize) {
    let sys = ReducedSystem::new(dims, set);
    (sys.equations, sys.variables)
}

pub fn jacobian_rank_oracle(dims: &ClusterDims, set: &AlignmentSet, seed: u64) -> Result<bool> {
    jacobian_rank_oracle_with(dims, set, seed, OracleOptions::default())
}

/// Numerical test: the map `(v_bar, U_bar) -> F` is dominant (hence the IA
/// system is generically solvable) iff its Jacobian at a generic point has
/// full row rank.
pub fn jacobian_rank_oracle_with(dims: &ClusterDims, set: &AlignmentSet, seed: u64, opts: OracleOptions) -> Result<bool> {
    let sys = ReducedSystem::new(dims, set);
    if sys.equations == 0 {
        return Ok(true);
    }
    if sys.equations > sys.variables {
        return Ok(false);
    }
    if sys.equations > opts.size_cap || sys.variables > opts.size_cap {
        return Err(Error::TooLarge(format!(
            "{} equations x {} variables exceeds the cap of {}",
            sys.equations, sys.variables, opts.size_cap
        )));
    }
    let trials = opts.trials.max(1);
    let full = (0..trials)
        .filter(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t as u64));
            numerical_rank(&random_jacobian(dims, set, &sys, &mut rng)) == sys.equations
        })
        .count();
    Ok(2 * full > trials)
}

fn random_jacobian(dims: &ClusterDims, set: &AlignmentSet, sys: &ReducedSystem, rng: &mut ChaCha8Rng) -> CMat {
    let m1 = dims.rx_antennas() - 1;
    let n = dims.tx_antennas();
    // random evaluation point
    let bs_point: BTreeMap<usize, CMat> = set
        .base_stations()
        .into_iter()
        .map(|bs| {
            let k = dims.users_in(bs);
            (bs, random_cn_matrix(rng, n - k, k))
        })
        .collect();
    let user_point: BTreeMap<UserId, CMat> =
        set.users().into_iter().map(|u| (u, random_cn_matrix(rng, 1, m1))).collect();
    // generic channel blocks per pair: H2 is 1 x (N-K), H3 is (M-1) x K, H4 is (M-1) x (N-K)
    let blocks: BTreeMap<Pair, (CMat, CMat, CMat)> = set
        .iter()
        .map(|&p| {
            let k = dims.users_in(p.bs);
            (p, (random_cn_matrix(rng, 1, n - k), random_cn_matrix(rng, m1, k), random_cn_matrix(rng, m1, n - k)))
        })
        .collect();

    let mut jac = CMat::zeros(sys.equations, sys.variables);
    for (row, &(pair, stream)) in sys.rows.iter().enumerate() {
        let (h2, h3, h4) = &blocks[&pair];
        let ubar = &bs_point[&pair.bs];
        let w = &user_point[&pair.user];
        // dF_j / dw[m] = H3[m,j] + (H4 U_bar)[m,j]
        let h4u = h4 * ubar;
        for m in 0..m1 {
            jac[(row, sys.user_var(pair.user, m))] = h3[(m, stream)] + h4u[(m, stream)];
        }
        // dF_j / dU_bar[p,j] = H2[p] + (w H4)[p]
        let wh4 = w * h4;
        for p in 0..n - dims.users_in(pair.bs) {
            jac[(row, sys.bs_var(dims, pair.bs, p, stream))] = h2[(0, p)] + wh4[(0, p)];
        }
    }
    jac
}

/// Perfect matching (on the equation side) in the bipartite graph given by
/// the Jacobian sparsity with the `H4` blocks set to zero.
pub fn hall_matching_exists(dims: &ClusterDims, set: &AlignmentSet) -> Result<bool> {
    let sys = ReducedSystem::new(dims, set);
    if sys.equations == 0 {
        return Ok(true);
    }
    if sys.equations > sys.variables {
        return Ok(false);
    }
    let cap = OracleOptions::default().size_cap;
    if sys.equations > cap || sys.variables > cap {
        return Err(Error::TooLarge(format!("{} equations x {} variables", sys.equations, sys.variables)));
    }
    let m1 = dims.rx_antennas() - 1;
    let adjacency: Vec<Vec<usize>> = sys
        .rows
        .iter()
        .map(|&(pair, stream)| {
            let mut cols: Vec<usize> = (0..m1).map(|m| sys.user_var(pair.user, m)).collect();
            cols.extend((0..dims.tx_antennas() - dims.users_in(pair.bs)).map(|p| sys.bs_var(dims, pair.bs, p, stream)));
            cols
        })
        .collect();
    Ok(maximum_matching(&adjacency, sys.variables) == sys.equations)
}

/// Size of a maximum matching via augmenting paths. `adjacency[l]` lists the
/// right vertices adjacent to left vertex `l`.
pub fn maximum_matching(adjacency: &[Vec<usize>], right_size: usize) -> usize {
    fn augment(l: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &r in &adj[l] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].is_none_or(|other| augment(other, adj, seen, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right_size];
    let mut matched = 0;
    for l in 0..adjacency.len() {
        let mut seen = vec![false; right_size];
        if augment(l, adjacency, &mut seen, &mut owner) {
            matched += 1;
        }
    }
    matched
}
