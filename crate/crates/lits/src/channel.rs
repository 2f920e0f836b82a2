//! Fading realizations and the link-gain, SINR and rate formulas for the
//! C-band access links and the Ka-band terminal-to-satellite links.

use crate::error::{Error, Result};
use crate::scalar::{db_to_linear, dbm_to_watts, shannon, Scalar};
use crate::scenario::{Scenario, SPEED_OF_LIGHT};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum PathLossModel {
    /// Urban-micro NLOS: 22.7 + 36.7 log10(d) + 26 log10(f_GHz) dB.
    Umi,
    /// Bare power law `d^-alpha`.
    Exponent { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub p_u_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub bw_c_hz: f64,
    pub bw_ka_hz: f64,
    pub carrier_c_ghz: f64,
    pub path_loss: PathLossModel,
    pub shadowing_sigma_db: f64,
    /// Distances below this are clamped before applying path loss.
    pub min_distance_m: f64,
    pub carrier_ka_ghz: f64,
    pub rician_k: f64,
    pub g_max_dbi: f64,
    pub dish_diameter_m: f64,
    pub p_t_max_w: f64,
    pub noise_figure_db: f64,
    pub g_over_t_dbk: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            p_u_dbm: 23.0,
            noise_density_dbm_hz: -174.0,
            bw_c_hz: 20e6,
            bw_ka_hz: 400e6,
            carrier_c_ghz: 3.5,
            path_loss: PathLossModel::Umi,
            shadowing_sigma_db: 8.0,
            min_distance_m: 10.0,
            carrier_ka_ghz: 30.0,
            rician_k: 7.0,
            g_max_dbi: 43.3,
            dish_diameter_m: 0.6,
            p_t_max_w: 2.0,
            noise_figure_db: 1.2,
            g_over_t_dbk: 18.5,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bw_c_hz", self.bw_c_hz),
            ("bw_ka_hz", self.bw_ka_hz),
            ("carrier_c_ghz", self.carrier_c_ghz),
            ("carrier_ka_ghz", self.carrier_ka_ghz),
            ("dish_diameter_m", self.dish_diameter_m),
            ("p_t_max_w", self.p_t_max_w),
            ("min_distance_m", self.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rician_k >= 0.0) || !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::Config("rician_k and shadowing_sigma_db must be >= 0".into()));
        }
        if let PathLossModel::Exponent { alpha } = self.path_loss {
            if !(alpha > 0.0) {
                return Err(Error::Config("path-loss exponent must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn p_u(&self) -> f64 {
        dbm_to_watts(self.p_u_dbm)
    }

    /// C-band noise power per subchannel, watts.
    pub fn sigma2_b(&self, k_subch: usize) -> f64 {
        dbm_to_watts(self.noise_density_dbm_hz) * self.bw_c_hz / k_subch as f64
    }

    /// Ka-band noise per subchannel. The satellite G/T is folded into the
    /// channel gains, so this is `k_B * B * NF` in watts per kelvin.
    pub fn sigma2_t(&self, q_subch: usize) -> f64 {
        BOLTZMANN * self.bw_ka_hz / q_subch as f64 * db_to_linear(self.noise_figure_db)
    }

    pub fn g_bore(&self) -> f64 {
        db_to_linear(self.g_max_dbi)
    }

    pub fn ka_wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ka_ghz * 1e9)
    }

    pub fn offaxis_gain(&self, phi_deg: f64) -> f64 {
        offaxis_gain(phi_deg, self)
    }
}

/// Reference earth-station sidelobe mask, dBi.
///
/// Main lobe `Gmax - 2.5e-3 (D phi / lambda)^2` up to `phi_m`, a plateau at
/// `G1 = 2 + 15 log10(D/lambda)` up to `phi_r`, then `32 - 25 log10(phi)`
/// floored at -10 dBi. `phi_r` is placed where the sidelobe envelope meets the
/// plateau so the mask is continuous and non-increasing.
pub fn offaxis_gain_dbi<T: Scalar>(phi_deg: T, g_max_dbi: T, d_over_lambda: T) -> T {
    let phi = phi_deg.abs();
    let g1 = T::lit(2.0) + T::lit(15.0) * d_over_lambda.log10();
    let floor = T::lit(-10.0);
    let sidelobe = |p: T| (T::lit(32.0) - T::lit(25.0) * p.log10()).max(floor);
    if g_max_dbi <= g1 {
        return if phi == T::zero() { g_max_dbi } else { g_max_dbi.min(sidelobe(phi)) };
    }
    let phi_m = T::lit(20.0) / d_over_lambda * (g_max_dbi - g1).sqrt();
    let phi_r = T::lit(10.0).powf((T::lit(32.0) - g1) / T::lit(25.0));
    if phi < phi_m {
        let x = d_over_lambda * phi;
        g_max_dbi - T::lit(2.5e-3) * x * x
    } else if phi < phi_r {
        g1
    } else {
        sidelobe(phi)
    }
}

/// Linear off-axis gain at angle `phi_deg` from boresight.
pub fn offaxis_gain(phi_deg: f64, params: &RadioParams) -> f64 {
    db_to_linear(offaxis_gain_dbi(
        phi_deg,
        params.g_max_dbi,
        params.dish_diameter_m / params.ka_wavelength(),
    ))
}

/// Free-space power gain `(lambda / 4 pi d)^2`.
pub fn free_space_gain<T: Scalar>(distance_m: T, wavelength_m: T) -> T {
    let x = wavelength_m / (T::lit(4.0 * std::f64::consts::PI) * distance_m);
    x * x
}

/// Linear terrestrial path gain for a link of length `distance_m`.
pub fn terrestrial_path_gain(distance_m: f64, params: &RadioParams) -> f64 {
    let d = distance_m.max(params.min_distance_m);
    match params.path_loss {
        PathLossModel::Umi => {
            let pl_db = 22.7 + 36.7 * d.log10() + 26.0 * params.carrier_c_ghz.log10();
            db_to_linear(-pl_db)
        }
        PathLossModel::Exponent { alpha } => d.powf(-alpha),
    }
}

/// Unit-mean Rician power sample with factor `k`.
pub fn rician_power<R: rand::Rng + ?Sized>(rng: &mut R, k: f64) -> f64 {
    let los = (k / (k + 1.0)).sqrt();
    let s = (0.5 / (k + 1.0)).sqrt();
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    (los + s * x).powi(2) + (s * y).powi(2)
}

/// Unit-mean Rayleigh power sample.
pub fn rayleigh_power<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// All sampled squared channel magnitudes for one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub n_cells: usize,
    pub n_users: usize,
    pub k_subch: usize,
    pub n_tst: usize,
    pub n_sat: usize,
    pub q_subch: usize,
    /// `|h^B_{m,j,k}|^2`, row-major over (cell, user, subchannel).
    pub hb2: Vec<f64>,
    /// `|h^T_{t,n,q}|^2` including the satellite G/T, row-major over
    /// (terminal, satellite, subchannel).
    pub ht2: Vec<f64>,
    pub seed: u64,
}

impl ChannelRealization {
    #[inline]
    pub fn hb(&self, m: usize, j: usize, k: usize) -> f64 {
        self.hb2[(m * self.n_users + j) * self.k_subch + k]
    }

    #[inline]
    pub fn ht(&self, t: usize, n: usize, q: usize) -> f64 {
        self.ht2[(t * self.n_sat + n) * self.q_subch + q]
    }

    pub fn set_hb(&mut self, m: usize, j: usize, k: usize, v: f64) {
        let i = (m * self.n_users + j) * self.k_subch + k;
        self.hb2[i] = v;
    }

    pub fn set_ht(&mut self, t: usize, n: usize, q: usize, v: f64) {
        let i = (t * self.n_sat + n) * self.q_subch + q;
        self.ht2[i] = v;
    }
}

const CHANNEL_STREAM: u64 = 0x6368_616e;

pub fn sample_realization(s: &Scenario, params: &RadioParams, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHANNEL_STREAM);
    let (nc, nu, k) = (s.n_cells(), s.n_users(), s.k_subch);
    let (nt, ns, q) = (s.n_lsc(), s.n_satellites(), s.q_subch);
    let shadow = Normal::new(0.0, params.shadowing_sigma_db).expect("valid shadowing sigma");

    let mut hb2 = Vec::with_capacity(nc * nu * k);
    for m in 0..nc {
        for j in 0..nu {
            let pl = terrestrial_path_gain(s.user_cell_distance(m, j), params);
            let sh = db_to_linear(shadow.sample(&mut rng));
            for _ in 0..k {
                hb2.push(rayleigh_power(&mut rng) * sh * pl);
            }
        }
    }

    let g_over_t = db_to_linear(params.g_over_t_dbk);
    let lambda = params.ka_wavelength();
    let mut ht2 = Vec::with_capacity(nt * ns * q);
    for t in 0..nt {
        for n in 0..ns {
            let fs = free_space_gain(s.slant_range(t, n), lambda);
            for _ in 0..q {
                ht2.push(rician_power(&mut rng, params.rician_k) * fs * g_over_t);
            }
        }
    }

    ChannelRealization {
        n_cells: nc,
        n_users: nu,
        k_subch: k,
        n_tst: nt,
        n_sat: ns,
        q_subch: q,
        hb2,
        ht2,
        seed,
    }
}

// ---------------------------------------------------------------------------
// C-band rates
// ---------------------------------------------------------------------------

/// Rate of user `j` at cell `m` on subchannel `k`, bits/s/Hz.
///
/// `unit_user[m * K + k]` names the user holding unit `(m, k)`.
pub fn terrestrial_rate(
    m: usize,
    j: usize,
    k: usize,
    unit_user: &[Option<usize>],
    real: &ChannelRealization,
    params: &RadioParams,
) -> Result<f64> {
    let kk = real.k_subch;
    if unit_user.get(m * kk + k).copied().flatten() != Some(j) {
        return Err(Error::Contract(format!(
            "user {j} is not assigned to cell {m} subchannel {k}"
        )));
    }
    Ok(terrestrial_rate_unchecked(m, j, k, unit_user, real, params))
}

pub(crate) fn terrestrial_rate_unchecked(
    m: usize,
    j: usize,
    k: usize,
    unit_user: &[Option<usize>],
    real: &ChannelRealization,
    params: &RadioParams,
) -> f64 {
    let kk = real.k_subch;
    let p = params.p_u();
    let interference: f64 = (0..real.n_cells)
        .filter(|&m2| m2 != m)
        .filter_map(|m2| unit_user[m2 * kk + k])
        .map(|j2| p * real.hb(m, j2, k))
        .sum();
    shannon(p * real.hb(m, j, k) / (params.sigma2_b(kk) + interference))
}

/// Sum of per-link rates of cell `m`, bits/s/Hz.
pub fn cell_spectral_efficiency(
    m: usize,
    unit_user: &[Option<usize>],
    real: &ChannelRealization,
    params: &RadioParams,
) -> f64 {
    (0..real.k_subch)
        .filter_map(|k| unit_user[m * real.k_subch + k].map(|j| (j, k)))
        .map(|(j, k)| terrestrial_rate_unchecked(m, j, k, unit_user, real, params))
        .sum()
}

/// Absolute uplink rate of cell `m`, bits/s.
pub fn cell_rate(
    m: usize,
    unit_user: &[Option<usize>],
    real: &ChannelRealization,
    params: &RadioParams,
) -> f64 {
    cell_spectral_efficiency(m, unit_user, real, params) * params.bw_c_hz / real.k_subch as f64
}

// ---------------------------------------------------------------------------
// Ka-band rates
// ---------------------------------------------------------------------------

/// Precomputed antenna geometry: boresight gain and, per terminal, the
/// off-axis gain towards satellite `n` while pointing at satellite `n2`.
#[derive(Debug, Clone, PartialEq)]
pub struct KaGeometry {
    pub n_tst: usize,
    pub n_sat: usize,
    pub g_bore: f64,
    cross: Vec<f64>,
    pub elevation: Vec<f64>,
    pub visible: Vec<bool>,
    pub theta_th: f64,
    /// Links per terminal.
    pub n_r: usize,
}

impl KaGeometry {
    pub fn new(s: &Scenario, params: &RadioParams) -> Self {
        let (nt, ns) = (s.n_lsc(), s.n_satellites());
        let g_bore = params.g_bore();
        let mut cross = vec![0.0; nt * ns * ns];
        for t in 0..nt {
            for n in 0..ns {
                for n2 in 0..ns {
                    cross[(t * ns + n) * ns + n2] = if n == n2 {
                        g_bore
                    } else {
                        offaxis_gain(s.los_separation(t, n, n2), params)
                    };
                }
            }
        }
        let mut elevation = Vec::with_capacity(nt * ns);
        let mut visible = Vec::with_capacity(nt * ns);
        for t in 0..nt {
            for n in 0..ns {
                elevation.push(s.elevation(t, n));
                visible.push(s.is_visible(t, n));
            }
        }
        Self { n_tst: nt, n_sat: ns, g_bore, cross, elevation, visible, theta_th: s.theta_th, n_r: s.n_r }
    }

    /// Gain of terminal `t` towards satellite `n` while pointing at `toward`.
    #[inline]
    pub fn gain(&self, t: usize, n: usize, toward: usize) -> f64 {
        self.cross[(t * self.n_sat + n) * self.n_sat + toward]
    }

    #[inline]
    pub fn visible(&self, t: usize, n: usize) -> bool {
        self.visible[t * self.n_sat + n]
    }

    #[inline]
    pub fn elevation(&self, t: usize, n: usize) -> f64 {
        self.elevation[t * self.n_sat + n]
    }

    /// Whether satellites `n1` and `n2` may share a subchannel at terminal `t`.
    pub fn gate(&self, t: usize, n1: usize, n2: usize) -> bool {
        crate::scenario::elevation_gate(self.elevation(t, n1), self.elevation(t, n2), self.theta_th)
    }
}

/// One transmitting terminal-to-satellite link on a given subchannel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaLink {
    pub tst: usize,
    pub sat: usize,
    pub power: f64,
}

/// Rate of `links[i]` on subchannel `q` given all co-channel links, bits/s/Hz.
pub fn ka_link_rate(
    links: &[KaLink],
    i: usize,
    q: usize,
    geo: &KaGeometry,
    real: &ChannelRealization,
    sigma2: f64,
) -> f64 {
    let me = links[i];
    let signal = me.power * geo.g_bore * real.ht(me.tst, me.sat, q);
    let interference: f64 = links
        .iter()
        .filter(|l| l.sat != me.sat)
        .map(|l| l.power * geo.gain(l.tst, me.sat, l.sat) * real.ht(l.tst, me.sat, q))
        .sum();
    shannon(signal / (sigma2 + interference))
}

/// Rate of the link `(t, n, q)` under the unit-indexed assignment
/// `holder[n * Q + q]` with powers `power[n * Q + q]`, bits/s/Hz.
#[allow(clippy::too_many_arguments)]
pub fn ka_rate(
    t: usize,
    n: usize,
    q: usize,
    holder: &[Option<usize>],
    power: &[f64],
    geo: &KaGeometry,
    real: &ChannelRealization,
    params: &RadioParams,
) -> Result<f64> {
    let qq = real.q_subch;
    if holder.get(n * qq + q).copied().flatten() != Some(t) {
        return Err(Error::Contract(format!(
            "terminal {t} does not hold satellite {n} subchannel {q}"
        )));
    }
    if power[n * qq + q] < 0.0 {
        return Err(Error::Contract("negative transmit power".into()));
    }
    let links = links_on_subchannel(q, holder, power, real.n_sat, qq);
    let i = links.iter().position(|l| l.sat == n).expect("link present");
    Ok(ka_link_rate(&links, i, q, geo, real, params.sigma2_t(qq)))
}

pub fn links_on_subchannel(
    q: usize,
    holder: &[Option<usize>],
    power: &[f64],
    n_sat: usize,
    q_subch: usize,
) -> Vec<KaLink> {
    (0..n_sat)
        .filter_map(|n| {
            holder[n * q_subch + q].map(|tst| KaLink { tst, sat: n, power: power[n * q_subch + q] })
        })
        .collect()
}
