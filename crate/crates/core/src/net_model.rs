//! Cluster geometry, user drops and channel realization.
//!
//! Cells are indexed `0..G` in cluster order and users `(cell, index)` with
//! `index in 0..K_g`. Channel matrices are `M x N` (user antennas by BS
//! antennas) linear amplitude gains that already include pathloss,
//! shadowing, antenna gain and Rayleigh fading.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cn01, mix_seed, random_cn_matrix, CMat};

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId {
    pub cell: usize,
    pub index: usize,
}

impl UserId {
    pub fn new(cell: usize, index: usize) -> Self {
        Self { cell, index }
    }
}

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "U{}{}", self.cell + 1, self.index + 1)
    }
}

/// Shape of a `(G, {K_g}, M x N)` cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDims {
    users_per_cell: Vec<usize>,
    rx_antennas: usize,
    tx_antennas: usize,
    offsets: Vec<usize>,
}

impl ClusterDims {
    pub fn new(users_per_cell: Vec<usize>, rx_antennas: usize, tx_antennas: usize) -> Result<Self> {
        if users_per_cell.is_empty() {
            return Err(Error::Dims("need at least one cell".into()));
        }
        if users_per_cell.contains(&0) {
            return Err(Error::Dims(format!("every cell needs at least one user: {users_per_cell:?}")));
        }
        if rx_antennas == 0 {
            return Err(Error::Dims("M must be at least 1".into()));
        }
        let kmax = *users_per_cell.iter().max().unwrap();
        if tx_antennas < kmax {
            return Err(Error::Dims(format!("N = {tx_antennas} is smaller than the largest K_g = {kmax}")));
        }
        let mut offsets = Vec::with_capacity(users_per_cell.len() + 1);
        let mut acc = 0;
        for &k in &users_per_cell {
            offsets.push(acc);
            acc += k;
        }
        offsets.push(acc);
        Ok(Self { users_per_cell, rx_antennas, tx_antennas, offsets })
    }

    pub fn uniform(cells: usize, users: usize, rx_antennas: usize, tx_antennas: usize) -> Result<Self> {
        Self::new(vec![users; cells], rx_antennas, tx_antennas)
    }

    pub fn cells(&self) -> usize {
        self.users_per_cell.len()
    }

    pub fn users_in(&self, cell: usize) -> usize {
        self.users_per_cell[cell]
    }

    pub fn users_per_cell(&self) -> &[usize] {
        &self.users_per_cell
    }

    /// M
    pub fn rx_antennas(&self) -> usize {
        self.rx_antennas
    }

    /// N
    pub fn tx_antennas(&self) -> usize {
        self.tx_antennas
    }

    pub fn num_users(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Common K when every cell schedules the same number of users.
    pub fn uniform_users(&self) -> Option<usize> {
        let k = self.users_per_cell[0];
        self.users_per_cell.iter().all(|&x| x == k).then_some(k)
    }

    pub fn flat(&self, user: UserId) -> usize {
        self.offsets[user.cell] + user.index
    }

    pub fn user_at(&self, flat: usize) -> UserId {
        let cell = self.offsets.partition_point(|&o| o <= flat) - 1;
        UserId::new(cell, flat - self.offsets[cell])
    }

    pub fn contains(&self, user: UserId) -> bool {
        user.cell < self.cells() && user.index < self.users_per_cell[user.cell]
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users_per_cell
            .iter()
            .enumerate()
            .flat_map(|(g, &k)| (0..k).map(move |j| UserId::new(g, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyKind {
    ThreeSector,
    Ring5,
    Hex7,
    Hex49Surround,
}

impl TopologyKind {
    pub fn cluster_size(self) -> usize {
        match self {
            TopologyKind::ThreeSector => 3,
            TopologyKind::Ring5 => 5,
            TopologyKind::Hex7 | TopologyKind::Hex49Surround => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::ThreeSector => "ThreeSector",
            TopologyKind::Ring5 => "Ring5",
            TopologyKind::Hex7 => "Hex7",
            TopologyKind::Hex49Surround => "Hex49Surround",
        }
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "threesector" | "three-sector" | "3sector" => Ok(Self::ThreeSector),
            "ring5" | "ring" => Ok(Self::Ring5),
            "hex7" => Ok(Self::Hex7),
            "hex49surround" | "hex49" => Ok(Self::Hex49Surround),
            other => Err(Error::Config(format!("unknown topology kind '{other}'"))),
        }
    }
}

/// Region in which a cell's users are dropped uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CellRegion {
    /// Pointy-top hexagon (vertices at 30 + 60k degrees).
    Hexagon { center: Point, circumradius: f64 },
    /// Annular wedge around `origin`, angles in radians.
    AnnularSector { origin: Point, r_inner: f64, r_outer: f64, mid_angle: f64, half_width: f64 },
}

impl CellRegion {
    pub fn contains(&self, p: Point) -> bool {
        const SLACK: f64 = 1e-9;
        match *self {
            CellRegion::Hexagon { center, circumradius } => {
                let apothem = circumradius * 3f64.sqrt() / 2.0;
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                [0.0f64, PI / 3.0, 2.0 * PI / 3.0]
                    .iter()
                    .all(|&phi| (x * phi.cos() + y * phi.sin()).abs() <= apothem * (1.0 + SLACK))
            }
            CellRegion::AnnularSector { origin, r_inner, r_outer, mid_angle, half_width } => {
                let (x, y) = (p[0] - origin[0], p[1] - origin[1]);
                let r = x.hypot(y);
                let mut dtheta = y.atan2(x) - mid_angle;
                dtheta = (dtheta + PI).rem_euclid(2.0 * PI) - PI;
                r >= r_inner * (1.0 - SLACK)
                    && r <= r_outer * (1.0 + SLACK)
                    && dtheta.abs() <= half_width * (1.0 + SLACK)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            CellRegion::Hexagon { circumradius, .. } => 1.5 * 3f64.sqrt() * circumradius * circumradius,
            CellRegion::AnnularSector { r_inner, r_outer, half_width, .. } => {
                half_width * (r_outer * r_outer - r_inner * r_inner)
            }
        }
    }

    pub fn centroid(&self) -> Point {
        match *self {
            CellRegion::Hexagon { center, .. } => center,
            CellRegion::AnnularSector { origin, r_inner, r_outer, mid_angle, half_width } => {
                let r = 2.0 / 3.0 * (r_outer.powi(3) - r_inner.powi(3)) / (r_outer.powi(2) - r_inner.powi(2))
                    * half_width.sin()
                    / half_width;
                [origin[0] + r * mid_angle.cos(), origin[1] + r * mid_angle.sin()]
            }
        }
    }

    /// One uniform sample from the region (no rejection needed for either shape
    /// beyond the hexagon's bounding box).
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match *self {
            CellRegion::Hexagon { center, circumradius } => {
                let apothem = circumradius * 3f64.sqrt() / 2.0;
                loop {
                    let p = [
                        center[0] + rng.random_range(-apothem..=apothem),
                        center[1] + rng.random_range(-circumradius..=circumradius),
                    ];
                    if self.contains(p) {
                        return p;
                    }
                }
            }
            CellRegion::AnnularSector { origin, r_inner, r_outer, mid_angle, half_width } => {
                let r2 = rng.random_range(r_inner * r_inner..=r_outer * r_outer);
                let theta = mid_angle + rng.random_range(-half_width..=half_width);
                let r = r2.sqrt();
                [origin[0] + r * theta.cos(), origin[1] + r * theta.sin()]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub bs_distance_m: f64,
    pub bs_positions: Vec<Point>,
    /// Indices into `bs_positions`; cell `g` of the cluster is `bs_positions[cluster_bs[g]]`.
    pub cluster_bs: Vec<usize>,
    /// One region per BS in `bs_positions`.
    pub cell_regions: Vec<CellRegion>,
}

impl Topology {
    pub fn cluster_size(&self) -> usize {
        self.cluster_bs.len()
    }

    pub fn out_of_cluster_bs(&self) -> Vec<usize> {
        (0..self.bs_positions.len()).filter(|i| !self.cluster_bs.contains(i)).collect()
    }

    pub fn cluster_position(&self, cell: usize) -> Point {
        self.bs_positions[self.cluster_bs[cell]]
    }

    pub fn cluster_region(&self, cell: usize) -> &CellRegion {
        &self.cell_regions[self.cluster_bs[cell]]
    }
}

fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn hex7_offsets(d: f64) -> Vec<Point> {
    let mut pts = vec![[0.0, 0.0]];
    pts.extend((0..6).map(|k| rotate([d, 0.0], k as f64 * PI / 3.0)));
    pts
}

pub fn build_topology(kind: TopologyKind, bs_distance_m: f64) -> Result<Topology> {
    if !(bs_distance_m.is_finite() && bs_distance_m > 0.0) {
        return Err(Error::Config(format!("BS distance must be positive, got {bs_distance_m}")));
    }
    let d = bs_distance_m;
    let hex_radius = d / 3f64.sqrt();
    let hexagons = |centers: &[Point]| -> Vec<CellRegion> {
        centers.iter().map(|&c| CellRegion::Hexagon { center: c, circumradius: hex_radius }).collect()
    };
    let layout = match kind {
        TopologyKind::ThreeSector => {
            // three hexagons meeting at a common vertex
            let pos = vec![[0.0, 0.0], [d, 0.0], [d / 2.0, d * 3f64.sqrt() / 2.0]];
            Topology { kind, bs_distance_m: d, cell_regions: hexagons(&pos), cluster_bs: vec![0, 1, 2], bs_positions: pos }
        }
        TopologyKind::Ring5 => {
            let half_width = PI / 5.0;
            let radius = d / (2.0 * half_width.sin());
            let mut pos = Vec::new();
            let mut regions = Vec::new();
            for i in 0..5 {
                let angle = PI / 2.0 + 2.0 * PI * i as f64 / 5.0;
                pos.push([radius * angle.cos(), radius * angle.sin()]);
                regions.push(CellRegion::AnnularSector {
                    origin: [0.0, 0.0],
                    r_inner: radius - d / 2.0,
                    r_outer: radius,
                    mid_angle: angle,
                    half_width,
                });
            }
            Topology { kind, bs_distance_m: d, bs_positions: pos, cluster_bs: (0..5).collect(), cell_regions: regions }
        }
        TopologyKind::Hex7 => {
            let pos = hex7_offsets(d);
            Topology { kind, bs_distance_m: d, cell_regions: hexagons(&pos), cluster_bs: (0..7).collect(), bs_positions: pos }
        }
        TopologyKind::Hex49Surround => {
            // seven 7-cell clusters tiling the plane; the shift (2a1 + a2) has length sqrt(7) d
            let shift = [2.5 * d, 3f64.sqrt() / 2.0 * d];
            let mut centers = vec![[0.0, 0.0]];
            centers.extend((0..6).map(|k| rotate(shift, k as f64 * PI / 3.0)));
            let mut pos = Vec::with_capacity(49);
            for c in &centers {
                for o in hex7_offsets(d) {
                    pos.push([c[0] + o[0], c[1] + o[1]]);
                }
            }
            Topology { kind, bs_distance_m: d, cell_regions: hexagons(&pos), cluster_bs: (0..7).collect(), bs_positions: pos }
        }
    };
    Ok(layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drop {
    /// Indexed by `ClusterDims::flat`.
    pub user_positions: Vec<Point>,
    pub seed: u64,
}

/// Link-budget parameters. Defaults reproduce the isolated-cluster simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    pub tx_psd_dbm_per_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub tone_bandwidth_hz: f64,
    pub antenna_gain_db: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub shadowing_sd_db: f64,
    pub sinr_gap_db: f64,
    /// Users closer than this to their serving BS are redrawn.
    pub min_user_distance_m: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            tx_psd_dbm_per_hz: -35.0,
            noise_psd_dbm_per_hz: -169.0,
            // puts the per-tone budget at exactly 16.9 dBm
            tone_bandwidth_hz: 10f64.powf((16.9 + 35.0) / 10.0),
            antenna_gain_db: 10.0,
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.0,
            shadowing_sd_db: 8.0,
            sinr_gap_db: 6.0,
            min_user_distance_m: 35.0,
        }
    }
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tx_psd_dbm_per_hz,
            self.noise_psd_dbm_per_hz,
            self.tone_bandwidth_hz,
            self.antenna_gain_db,
            self.pathloss_intercept_db,
            self.pathloss_slope_db,
            self.shadowing_sd_db,
            self.sinr_gap_db,
            self.min_user_distance_m,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("link parameters must be finite".into()));
        }
        if self.tone_bandwidth_hz <= 0.0 {
            return Err(Error::Config(format!("tone bandwidth must be positive, got {}", self.tone_bandwidth_hz)));
        }
        if self.shadowing_sd_db < 0.0 || self.min_user_distance_m < 0.0 {
            return Err(Error::Config("shadowing SD and minimum distance must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-BS power budget per tone (W).
    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.tx_psd_dbm_per_hz) * self.tone_bandwidth_hz
    }

    /// Noise variance per receive antenna per tone (W).
    pub fn noise_variance(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz) * self.tone_bandwidth_hz
    }

    pub fn sinr_gap_linear(&self) -> f64 {
        10f64.powf(self.sinr_gap_db / 10.0)
    }

    /// Distance-dependent pathloss in dB, `d` in meters (the formula takes km).
    pub fn pathloss_db(&self, distance_m: f64) -> Result<f64> {
        if !(distance_m > 0.0) {
            return Err(Error::Config(format!("pathloss needs a positive distance, got {distance_m}")));
        }
        Ok(self.pathloss_intercept_db + self.pathloss_slope_db * (distance_m / 1000.0).log10())
    }

    /// Large-scale power gain in dB for a link with the given shadowing draw.
    pub fn link_gain_db(&self, distance_m: f64, shadow_db: f64) -> Result<f64> {
        Ok(-self.pathloss_db(distance_m)? + shadow_db + self.antenna_gain_db)
    }
}

pub fn drop_users(topology: &Topology, dims: &ClusterDims, params: &LinkParams, seed: u64) -> Result<Drop> {
    if dims.cells() != topology.cluster_size() {
        return Err(Error::Config(format!(
            "dims have {} cells but the {} cluster has {}",
            dims.cells(),
            topology.kind.name(),
            topology.cluster_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(dims.num_users());
    for user in dims.users() {
        let region = topology.cluster_region(user.cell);
        let bs = topology.cluster_position(user.cell);
        let p = loop {
            let p = region.sample(&mut rng);
            if dist(p, bs) >= params.min_user_distance_m && dist(p, bs) > 0.0 {
                break p;
            }
        };
        positions.push(p);
    }
    Ok(Drop { user_positions: positions, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub dims: ClusterDims,
    /// `links[bs * num_users + flat_user]`, each `M x N`.
    links: Vec<CMat>,
    /// Linear large-scale power gain for each entry of `links`.
    large_scale: Vec<f64>,
    pub sigma_n2: f64,
    /// Out-of-cluster interference variance per user (flat index).
    pub nu2: Vec<f64>,
    pub p_max: f64,
}

impl ChannelSet {
    /// Assemble from explicit matrices, `links[bs][flat_user]`.
    pub fn from_links(dims: ClusterDims, links: Vec<Vec<CMat>>, sigma_n2: f64, nu2: Vec<f64>, p_max: f64) -> Result<Self> {
        let users = dims.num_users();
        if links.len() != dims.cells() || links.iter().any(|row| row.len() != users) {
            return Err(Error::Dims("link table must be G x (total users)".into()));
        }
        let (m, n) = (dims.rx_antennas(), dims.tx_antennas());
        let flat: Vec<CMat> = links.into_iter().flatten().collect();
        if flat.iter().any(|h| h.nrows() != m || h.ncols() != n) {
            return Err(Error::Dims(format!("every link matrix must be {m}x{n}")));
        }
        if flat.iter().any(|h| h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Numerical("non-finite channel entry".into()));
        }
        if !(sigma_n2 > 0.0) || !(p_max > 0.0) || nu2.len() != users || nu2.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Config("need sigma_n2 > 0, p_max > 0 and nu2 >= 0 per user".into()));
        }
        let large_scale = flat.iter().map(|h| h.norm_squared() / (m * n) as f64).collect();
        Ok(Self { dims, links: flat, large_scale, sigma_n2, nu2, p_max })
    }

    /// Unit-gain i.i.d. Rayleigh links with unit noise and unit power budget.
    pub fn iid_rayleigh(dims: &ClusterDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (dims.rx_antennas(), dims.tx_antennas());
        let links = (0..dims.cells())
            .map(|_| (0..dims.num_users()).map(|_| random_cn_matrix(&mut rng, m, n)).collect())
            .collect();
        Self::from_links(dims.clone(), links, 1.0, vec![0.0; dims.num_users()], 1.0)
            .expect("gaussian links are finite and well-shaped")
    }

    pub fn h(&self, bs: usize, user: UserId) -> &CMat {
        &self.links[bs * self.dims.num_users() + self.dims.flat(user)]
    }

    pub fn large_scale_gain(&self, bs: usize, user: UserId) -> f64 {
        self.large_scale[bs * self.dims.num_users() + self.dims.flat(user)]
    }

    pub fn nu2_of(&self, user: UserId) -> f64 {
        self.nu2[self.dims.flat(user)]
    }

    /// Noise plus out-of-cluster interference seen by `user`.
    pub fn noise_of(&self, user: UserId) -> f64 {
        self.sigma_n2 + self.nu2_of(user)
    }

    /// Equivalent system with unit noise and unit power budget: SINRs are unchanged
    /// when transmit vectors are divided by `sqrt(p_max)`.
    pub fn normalized(&self) -> ChannelSet {
        let scale = (self.p_max / self.sigma_n2).sqrt();
        ChannelSet {
            dims: self.dims.clone(),
            links: self.links.iter().map(|h| h * crate::linalg::C64::new(scale, 0.0)).collect(),
            large_scale: self.large_scale.iter().map(|g| g * scale * scale).collect(),
            sigma_n2: 1.0,
            nu2: self.nu2.iter().map(|x| x / self.sigma_n2).collect(),
            p_max: 1.0,
        }
    }

    /// Links with their large-scale gain divided out, leaving only fading.
    /// Exact alignment solutions are unchanged by per-link scaling, while the
    /// leakage landscape loses the pathloss spread.
    pub fn small_scale(&self) -> ChannelSet {
        let mut out = self.clone();
        for (h, g) in out.links.iter_mut().zip(&self.large_scale) {
            if *g > 0.0 {
                *h /= crate::linalg::C64::new(g.sqrt(), 0.0);
            }
        }
        out.large_scale = vec![1.0; self.large_scale.len()];
        out
    }

    /// Order-sensitive 64-bit fingerprint of every stored number.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for m in &self.links {
            for z in m.iter() {
                eat(z.re);
                eat(z.im);
            }
        }
        eat(self.sigma_n2);
        eat(self.p_max);
        self.nu2.iter().for_each(|&x| eat(x));
        h
    }
}

pub fn realize_channels(
    topology: &Topology,
    drop: &Drop,
    dims: &ClusterDims,
    params: &LinkParams,
    seed: u64,
) -> Result<ChannelSet> {
    params.validate()?;
    if drop.user_positions.len() != dims.num_users() || dims.cells() != topology.cluster_size() {
        return Err(Error::Config("drop, dims and topology disagree on the cluster shape".into()));
    }
    let (m, n) = (dims.rx_antennas(), dims.tx_antennas());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, params.shadowing_sd_db).map_err(|e| Error::Config(e.to_string()))?;
    let mut links = Vec::with_capacity(dims.cells());
    let mut gains = Vec::with_capacity(dims.cells() * dims.num_users());
    for bs in 0..dims.cells() {
        let bs_pos = topology.cluster_position(bs);
        let mut row = Vec::with_capacity(dims.num_users());
        for user in dims.users() {
            let d = dist(bs_pos, drop.user_positions[dims.flat(user)]);
            if d == 0.0 {
                return Err(Error::CoLocated { bs, cell: user.cell, user: user.index });
            }
            let s = shadow.sample(&mut rng);
            let gain = 10f64.powf(params.link_gain_db(d, s)? / 10.0);
            gains.push(gain);
            let amp = gain.sqrt();
            let data: Vec<_> = (0..m * n).map(|_| cn01(&mut rng) * amp).collect();
            row.push(CMat::from_column_slice(m, n, &data));
        }
        links.push(row);
    }
    let nu2 = out_of_cluster_power(topology, drop, dims, params, mix_seed(seed, 0x0C1A))?;
    let mut set = ChannelSet::from_links(dims.clone(), links, params.noise_variance(), nu2, params.p_max())?;
    set.large_scale = gains;
    Ok(set)
}

/// Fading-averaged received power from every out-of-cluster BS, per user.
pub fn out_of_cluster_power(
    topology: &Topology,
    drop: &Drop,
    dims: &ClusterDims,
    params: &LinkParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let outsiders = topology.out_of_cluster_bs();
    if outsiders.is_empty() {
        return Ok(vec![0.0; dims.num_users()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, params.shadowing_sd_db).map_err(|e| Error::Config(e.to_string()))?;
    let p = params.p_max();
    let mut nu2 = Vec::with_capacity(dims.num_users());
    for user in dims.users() {
        let pos = drop.user_positions[dims.flat(user)];
        let mut total = 0.0;
        for &bs in &outsiders {
            let s = shadow.sample(&mut rng);
            let d = dist(topology.bs_positions[bs], pos);
            total += p * 10f64.powf(params.link_gain_db(d, s)? / 10.0);
        }
        nu2.push(total);
    }
    Ok(nu2)
}
