//! Independent oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use piasim::feasibility::{AlignmentSet, Pair};
use piasim::net_model::{build_topology, drop_users, realize_channels, LinkParams};
use piasim::{ChannelSet, ClusterDims, TopologyKind, UserId};
use rand::seq::SliceRandom;
use rand::Rng;

/// Checks the counting inequality on every one of the `2^|I|` subsets.
pub fn brute_force_feasible(dims: &ClusterDims, set: &AlignmentSet) -> bool {
    let pairs: Vec<Pair> = set.iter().copied().collect();
    assert!(pairs.len() <= 20, "brute force is for small sets");
    let m1 = dims.rx_antennas() - 1;
    (1u32..(1u32 << pairs.len())).all(|mask| {
        let chosen: Vec<Pair> = (0..pairs.len()).filter(|b| mask >> b & 1 == 1).map(|b| pairs[b]).collect();
        let mut users: Vec<UserId> = chosen.iter().map(|p| p.user).collect();
        users.sort();
        users.dedup();
        let mut bss: Vec<usize> = chosen.iter().map(|p| p.bs).collect();
        bss.sort();
        bss.dedup();
        let variables: usize = users.len() * m1
            + bss.iter().map(|&b| (dims.tx_antennas() - dims.users_in(b)) * dims.users_in(b)).sum::<usize>();
        let equations: usize = chosen.iter().map(|p| dims.users_in(p.bs)).sum();
        variables >= equations
    })
}

/// Every inter-cell pair of the cluster.
pub fn all_pairs(dims: &ClusterDims) -> Vec<Pair> {
    AlignmentSet::all(dims).iter().copied().collect()
}

/// Uniformly chosen subset of `size` inter-cell pairs.
pub fn random_set<R: Rng>(rng: &mut R, dims: &ClusterDims, size: usize) -> AlignmentSet {
    let mut pool = all_pairs(dims);
    pool.shuffle(rng);
    pool.truncate(size);
    AlignmentSet::from_pairs(dims, pool).unwrap()
}

/// Scalar equation and variable counts of the nulling system.
pub fn counts(dims: &ClusterDims, set: &AlignmentSet) -> (usize, usize) {
    let eq = set.iter().map(|p| dims.users_in(p.bs)).sum();
    let var = set.users().len() * (dims.rx_antennas() - 1)
        + set
            .base_stations()
            .iter()
            .map(|&b| (dims.tx_antennas() - dims.users_in(b)) * dims.users_in(b))
            .sum::<usize>();
    (eq, var)
}

/// Random cluster with up to 4 cells, per-cell users in {1, 2} and up to 4 antennas.
pub fn random_dims<R: Rng>(rng: &mut R, uniform: bool) -> ClusterDims {
    let g = rng.random_range(2..=4);
    let users: Vec<usize> = if uniform {
        vec![rng.random_range(1..=2); g]
    } else {
        (0..g).map(|_| rng.random_range(1..=2)).collect()
    };
    let kmax = *users.iter().max().unwrap();
    let m = rng.random_range(1..=4);
    let n = rng.random_range(kmax..=4);
    ClusterDims::new(users, m, n).unwrap()
}

/// Noise-normalized channels of one seeded drop with default link parameters.
pub fn realistic(kind: TopologyKind, k: usize, m: usize, n: usize, distance_m: f64, seed: u64) -> ChannelSet {
    let topo = build_topology(kind, distance_m).unwrap();
    let dims = ClusterDims::uniform(kind.cluster_size(), k, m, n).unwrap();
    let params = LinkParams::default();
    let drop = drop_users(&topo, &dims, &params, seed).unwrap();
    realize_channels(&topo, &drop, &dims, &params, seed.wrapping_add(1)).unwrap().normalized()
}
