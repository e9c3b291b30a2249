//! Two-lane cut-in scenario.
//!
//! Five surrounding vehicles (SVs) follow IDM and one of them (the cut-in
//! vehicle, SV2 by default) decides lane changes with MOBIL. The vehicle
//! under test uses a bang-bang gap keeper. Everything is deterministic.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Decelerations of the hypothetical new follower below `-B_SAFE` veto a
/// lane change.
pub const DEFAULT_B_SAFE: f64 = 4.0;

/// Gap used by [`idm_accel`] in place of a non-positive one.
const MIN_IDM_GAP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdmParams {
    /// Free-flow speed, m/s.
    pub v0: f64,
    /// Maximum acceleration, m/s^2.
    pub alpha: f64,
    /// Safe time gap, s.
    pub time_gap: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    /// Minimum standstill gap, m.
    pub s0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilParams {
    pub politeness: f64,
    /// Acceleration-gain threshold, m/s^2.
    pub delta_a_th: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
}

/// IDM acceleration for speed `v`, approach rate `dv = v - v_lead` and
/// bumper gap `s`. Pass `f64::INFINITY` for a free road.
pub fn idm_accel(v: f64, dv: f64, s: f64, prm: &IdmParams) -> f64 {
    let s = if s <= 0.0 { MIN_IDM_GAP } else { s };
    let dynamic = v * prm.time_gap + v * dv / (2.0 * (prm.alpha * prm.b).sqrt());
    let s_star = prm.s0 + dynamic.max(0.0);
    let interaction = if s.is_infinite() { 0.0 } else { (s_star / s).powi(2) };
    prm.alpha * (1.0 - (v / prm.v0).powi(4) - interaction)
}

/// The six accelerations MOBIL compares: current vs. after the change for
/// the deciding vehicle (`c`), its new follower (`n`) and old follower (`o`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MobilAccels {
    pub a_c: f64,
    pub a_c_new: f64,
    pub a_n: f64,
    pub a_n_new: f64,
    pub a_o: f64,
    pub a_o_new: f64,
}

/// Own gain plus politeness-weighted gain of the two followers.
pub fn mobil_incentive(acc: &MobilAccels, politeness: f64) -> f64 {
    (acc.a_c_new - acc.a_c) + politeness * ((acc.a_n_new - acc.a_n) + (acc.a_o_new - acc.a_o))
}

pub fn mobil_decision(acc: &MobilAccels, prm: &MobilParams, b_safe: f64) -> bool {
    mobil_incentive(acc, prm.politeness) > prm.delta_a_th && acc.a_n_new >= -b_safe
}

/// Time to collision; infinite when the gap is not closing.
pub fn ttc(gap: f64, closing_speed: f64) -> f64 {
    if closing_speed > 0.0 {
        gap.max(0.0) / closing_speed
    } else {
        f64::INFINITY
    }
}

/// Gap-keeping speed law of the vehicle under test.
pub fn av_speed_update(v: f64, gap: f64, cfg: &SimConfig) -> f64 {
    if gap < cfg.desired_gap {
        (v - cfg.a_max * cfg.dt).max(0.0)
    } else {
        (v + cfg.a_max * cfg.dt).min(cfg.v_max_av)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Av,
    Sv,
}

/// One vehicle's initial state. `sv` numbers surrounding vehicles from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub role: Role,
    #[serde(default)]
    pub sv: usize,
    pub lane: u8,
    pub position: f64,
    pub speed: f64,
}

impl LayoutEntry {
    pub fn av(lane: u8, position: f64, speed: f64) -> Self {
        Self {
            role: Role::Av,
            sv: 0,
            lane,
            position,
            speed,
        }
    }

    pub fn sv(sv: usize, lane: u8, position: f64, speed: f64) -> Self {
        Self {
            role: Role::Sv,
            sv,
            lane,
            position,
            speed,
        }
    }
}

/// How the cut-in vehicle estimates the reaction of the vehicle under test
/// when that vehicle would become its new follower.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerEstimate {
    /// Use the gap-keeping law of the vehicle under test.
    OwnModel,
    /// Use IDM with the deciding vehicle's parameters.
    Idm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub ttc_theta: f64,
    pub a_theta: f64,
    /// Desired gap `G` of the vehicle under test, m.
    pub desired_gap: f64,
    pub a_max: f64,
    pub v_max_av: f64,
    pub vehicle_length: f64,
    pub b_safe: f64,
    /// Physical braking limit applied to SV accelerations, m/s^2.
    pub max_decel: f64,
    /// Which SV evaluates MOBIL.
    pub cut_in_sv: usize,
    pub follower_estimate: FollowerEstimate,
    pub layout: Vec<LayoutEntry>,
}

impl SimConfig {
    /// Lane 0: SV1 far ahead, the vehicle under test closing on SV2's
    /// flank at 30 m/s, SV3 behind. Lane 1: SV2 12 m ahead of the AV's
    /// front bumper at 24 m/s, a slower SV4 260 m further on, SV5 well back.
    /// A cut-in right away leaves a TTC just under 2 s; waiting lets the AV
    /// close in, which MOBIL weighs through politeness.
    pub fn default_layout() -> Vec<LayoutEntry> {
        vec![
            LayoutEntry::sv(1, 0, 400.0, 25.0),
            LayoutEntry::av(0, 0.0, 30.0),
            LayoutEntry::sv(3, 0, -30.0, 25.0),
            LayoutEntry::sv(4, 1, 282.0, 22.0),
            LayoutEntry::sv(2, 1, 17.0, 24.0),
            LayoutEntry::sv(5, 1, -100.0, 24.0),
        ]
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("ttc_theta", self.ttc_theta),
            ("a_max", self.a_max),
            ("v_max_av", self.v_max_av),
            ("vehicle_length", self.vehicle_length),
            ("max_decel", self.max_decel),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err((key, format!("must be positive, got {v}")));
            }
        }
        if !(6.0..=12.0).contains(&self.desired_gap) {
            return Err(("desired_gap", format!("must lie in [6, 12], got {}", self.desired_gap)));
        }
        if !(self.b_safe >= 0.0) {
            return Err(("b_safe", format!("must be non-negative, got {}", self.b_safe)));
        }
        if !self.a_theta.is_finite() {
            return Err(("a_theta", "must be finite".into()));
        }
        let avs = self.layout.iter().filter(|e| e.role == Role::Av).count();
        if avs != 1 {
            return Err(("layout", format!("needs exactly one av entry, found {avs}")));
        }
        for e in &self.layout {
            if e.lane > 1 {
                return Err(("layout", format!("lane must be 0 or 1, got {}", e.lane)));
            }
            if e.speed < 0.0 || !e.position.is_finite() {
                return Err(("layout", "speeds must be >= 0 and positions finite".into()));
            }
            if e.role == Role::Sv && !(1..=crate::space::SV_COUNT).contains(&e.sv) {
                return Err(("layout", format!("sv number {} out of range", e.sv)));
            }
        }
        if !self
            .layout
            .iter()
            .any(|e| e.role == Role::Sv && e.sv == self.cut_in_sv)
        {
            return Err(("cut_in_sv", format!("sv{} is not in the layout", self.cut_in_sv)));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            t_max: 30.0,
            ttc_theta: 2.0,
            a_theta: 6.0,
            desired_gap: 9.0,
            a_max: 3.0,
            v_max_av: 30.0,
            vehicle_length: 5.0,
            b_safe: DEFAULT_B_SAFE,
            max_decel: 9.0,
            cut_in_sv: 2,
            follower_estimate: FollowerEstimate::OwnModel,
            layout: Self::default_layout(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub role: Role,
    pub sv: usize,
    pub lane: u8,
    pub position: f64,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeResult {
    pub min_ttc: f64,
    /// Most negative acceleration of the vehicle under test.
    pub min_accel: f64,
    pub collision: bool,
    pub lane_change_completed: bool,
    pub duration: f64,
    pub critical: bool,
}

impl fmt::Display for EpisodeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "min_ttc={} min_accel={} collision={} lane_change={} duration={} critical={}",
            self.min_ttc,
            self.min_accel,
            u8::from(self.collision),
            u8::from(self.lane_change_completed),
            self.duration,
            u8::from(self.critical)
        )
    }
}

/// Indicator: TTC or deceleration threshold violated, or a collision.
pub fn criticality(res: &EpisodeResult, cfg: &SimConfig) -> bool {
    res.min_ttc <= cfg.ttc_theta || res.min_accel <= -cfg.a_theta.abs() || res.collision
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub vehicles: Vec<VehicleState>,
    /// Bumper gap of the vehicle under test to its leader.
    pub gap: f64,
    pub ttc: f64,
}

pub fn run_episode(behaviors: &[BehaviorParams], cfg: &SimConfig) -> EpisodeResult {
    Episode::new(behaviors, cfg).run(None)
}

pub fn run_episode_traced(behaviors: &[BehaviorParams], cfg: &SimConfig) -> (EpisodeResult, Vec<TraceRow>) {
    let mut trace = Vec::new();
    let res = Episode::new(behaviors, cfg).run(Some(&mut trace));
    (res, trace)
}

struct Episode<'a> {
    cfg: &'a SimConfig,
    behaviors: &'a [BehaviorParams],
    vehicles: Vec<VehicleState>,
    av: usize,
    cut_in: usize,
}

impl<'a> Episode<'a> {
    fn new(behaviors: &'a [BehaviorParams], cfg: &'a SimConfig) -> Self {
        let vehicles: Vec<VehicleState> = cfg
            .layout
            .iter()
            .map(|e| VehicleState {
                role: e.role,
                sv: e.sv,
                lane: e.lane,
                position: e.position,
                speed: e.speed,
            })
            .collect();
        let av = vehicles
            .iter()
            .position(|v| v.role == Role::Av)
            .expect("layout has a vehicle under test");
        let cut_in = vehicles
            .iter()
            .position(|v| v.role == Role::Sv && v.sv == cfg.cut_in_sv)
            .expect("layout has the cut-in vehicle");
        for v in &vehicles {
            if v.role == Role::Sv {
                assert!(v.sv >= 1 && v.sv <= behaviors.len(), "missing behavior for sv{}", v.sv);
            }
        }
        Self {
            cfg,
            behaviors,
            vehicles,
            av,
            cut_in,
        }
    }

    fn idm_of(&self, i: usize) -> &IdmParams {
        &self.behaviors[self.vehicles[i].sv - 1].idm
    }

    /// Nearest vehicle in `lane` strictly ahead of `x`, excluding `skip`.
    fn leader_in(&self, lane: u8, x: f64, skip: usize) -> Option<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, v)| *j != skip && v.lane == lane && v.position > x)
            .min_by(|a, b| a.1.position.total_cmp(&b.1.position).then(a.0.cmp(&b.0)))
            .map(|(j, _)| j)
    }

    /// Nearest vehicle in `lane` at or behind `x`, excluding `skip`.
    fn follower_in(&self, lane: u8, x: f64, skip: usize) -> Option<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, v)| *j != skip && v.lane == lane && v.position <= x)
            .max_by(|a, b| a.1.position.total_cmp(&b.1.position).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j)
    }

    fn gap(&self, follower: usize, leader: usize) -> f64 {
        self.vehicles[leader].position - self.vehicles[follower].position - self.cfg.vehicle_length
    }

    fn idm_with(&self, follower: usize, leader: Option<usize>, prm: &IdmParams) -> f64 {
        let v = self.vehicles[follower].speed;
        match leader {
            Some(l) => idm_accel(v, v - self.vehicles[l].speed, self.gap(follower, l), prm),
            None => idm_accel(v, 0.0, f64::INFINITY, prm),
        }
    }

    /// Implied acceleration of the vehicle under test behind `leader`.
    fn av_accel_behind(&self, leader: Option<usize>) -> f64 {
        let v = self.vehicles[self.av].speed;
        let gap = leader.map_or(f64::INFINITY, |l| self.gap(self.av, l));
        (av_speed_update(v, gap, self.cfg) - v) / self.cfg.dt
    }

    /// Acceleration the cut-in vehicle attributes to `follower` behind `leader`.
    fn estimated_accel(&self, follower: usize, leader: Option<usize>) -> f64 {
        if self.vehicles[follower].role == Role::Av {
            match self.cfg.follower_estimate {
                FollowerEstimate::OwnModel => self.av_accel_behind(leader),
                FollowerEstimate::Idm => self.idm_with(follower, leader, self.idm_of(self.cut_in)),
            }
        } else {
            self.idm_with(follower, leader, self.idm_of(follower))
        }
    }

    fn mobil_accels(&self) -> MobilAccels {
        let c = self.cut_in;
        let me = self.vehicles[c];
        let target = 1 - me.lane;
        let prm = self.idm_of(c);

        let cur_leader = self.leader_in(me.lane, me.position, c);
        let new_leader = self.leader_in(target, me.position - 1e-9, c);
        let new_follower = self.follower_in(target, me.position - 1e-9, c);
        let old_follower = self.follower_in(me.lane, me.position, c);

        let mut acc = MobilAccels {
            a_c: self.idm_with(c, cur_leader, prm),
            a_c_new: self.idm_with(c, new_leader, prm),
            ..MobilAccels::default()
        };
        if let Some(n) = new_follower {
            acc.a_n = self.estimated_accel(n, new_leader);
            acc.a_n_new = self.estimated_accel(n, Some(c));
        }
        if let Some(o) = old_follower {
            acc.a_o = self.estimated_accel(o, Some(c));
            acc.a_o_new = self.estimated_accel(o, cur_leader);
        }
        acc
    }

    /// The target lane has room: positive bumper gaps to both new neighbors.
    fn slot_free(&self) -> bool {
        let c = self.cut_in;
        let me = self.vehicles[c];
        let target = 1 - me.lane;
        let ahead = self
            .leader_in(target, me.position - 1e-9, c)
            .is_none_or(|l| self.gap(c, l) > 0.0);
        let behind = self
            .follower_in(target, me.position - 1e-9, c)
            .is_none_or(|f| self.gap(f, c) > 0.0);
        ahead && behind
    }

    fn collision(&self) -> bool {
        for lane in 0..2u8 {
            let mut xs: Vec<f64> = self
                .vehicles
                .iter()
                .filter(|v| v.lane == lane)
                .map(|v| v.position)
                .collect();
            xs.sort_by(f64::total_cmp);
            if xs.windows(2).any(|w| w[1] - w[0] - self.cfg.vehicle_length <= 0.0) {
                return true;
            }
        }
        false
    }

    fn run(mut self, mut trace: Option<&mut Vec<TraceRow>>) -> EpisodeResult {
        let cfg = self.cfg;
        let steps = (cfg.t_max / cfg.dt).round() as usize;
        let mut min_ttc = f64::INFINITY;
        let mut min_accel = f64::INFINITY;
        let mut collision = false;
        let mut completed = false;
        let mut pending = false;
        let mut swapped_at: Option<usize> = None;
        let mut step = 0usize;

        loop {
            if pending {
                let c = self.cut_in;
                self.vehicles[c].lane = 1 - self.vehicles[c].lane;
                swapped_at = Some(step);
                pending = false;
            }

            let av = self.vehicles[self.av];
            let leader = self.leader_in(av.lane, av.position, self.av);
            let (gap, step_ttc) = match leader {
                Some(l) => {
                    let gap = self.gap(self.av, l);
                    (gap, ttc(gap, av.speed - self.vehicles[l].speed))
                }
                None => (f64::INFINITY, f64::INFINITY),
            };
            min_ttc = min_ttc.min(step_ttc);
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceRow {
                    t: step as f64 * cfg.dt,
                    vehicles: self.vehicles.clone(),
                    gap,
                    ttc: step_ttc,
                });
            }

            if self.collision() {
                collision = true;
                break;
            }
            if swapped_at.is_some_and(|s| s + 1 == step) {
                completed = true;
                break;
            }
            if step >= steps {
                break;
            }
            if swapped_at.is_none() {
                let prm = self.behaviors[self.vehicles[self.cut_in].sv - 1].mobil;
                pending = self.slot_free() && mobil_decision(&self.mobil_accels(), &prm, cfg.b_safe);
            }

            // Synchronous update from the current snapshot.
            let next_speeds: Vec<f64> = (0..self.vehicles.len())
                .map(|i| {
                    let v = self.vehicles[i];
                    let leader = self.leader_in(v.lane, v.position, i);
                    match v.role {
                        Role::Av => {
                            let gap = leader.map_or(f64::INFINITY, |l| self.gap(i, l));
                            av_speed_update(v.speed, gap, cfg)
                        }
                        Role::Sv => {
                            let a = self.idm_with(i, leader, self.idm_of(i)).max(-cfg.max_decel);
                            (v.speed + a * cfg.dt).max(0.0)
                        }
                    }
                })
                .collect();
            let av_accel = (next_speeds[self.av] - self.vehicles[self.av].speed) / cfg.dt;
            min_accel = min_accel.min(av_accel);
            for (v, next) in self.vehicles.iter_mut().zip(next_speeds) {
                v.position += 0.5 * (v.speed + next) * cfg.dt;
                v.speed = next;
            }
            step += 1;
        }

        let mut res = EpisodeResult {
            min_ttc,
            min_accel: if min_accel.is_finite() { min_accel } else { 0.0 },
            collision,
            lane_change_completed: completed,
            duration: step as f64 * cfg.dt,
            critical: false,
        };
        res.critical = criticality(&res, cfg);
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn idm(v0: f64, alpha: f64, time_gap: f64, b: f64, s0: f64) -> IdmParams {
        IdmParams {
            v0,
            alpha,
            time_gap,
            b,
            s0,
        }
    }

    fn behaviors(idm: IdmParams, politeness: f64, delta_a_th: f64) -> Vec<BehaviorParams> {
        vec![
            BehaviorParams {
                idm,
                mobil: MobilParams {
                    politeness,
                    delta_a_th
                }
            };
            5
        ]
    }

    #[test]
    fn idm_free_flow_equilibrium() {
        let prm = idm(30.0, 2.0, 1.5, 2.0, 2.0);
        let a = idm_accel(30.0, 0.0, 1e9, &prm);
        assert!(a.abs() < 1e-6 * prm.alpha);
    }

    #[test]
    fn idm_standstill_accelerates_at_alpha() {
        let prm = idm(30.0, 2.5, 1.5, 2.0, 0.1);
        assert_abs_diff_eq!(idm_accel(0.0, 0.0, 1e9, &prm), 2.5, epsilon = 1e-9);
    }

    #[test]
    fn idm_hand_evaluated_case() {
        let prm = idm(30.0, 2.0, 1.5, 2.0, 2.0);
        let expected = 2.0 * (1.0 - (2.0f64 / 3.0).powi(4) - 1.0);
        assert_abs_diff_eq!(idm_accel(20.0, 0.0, 32.0, &prm), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, -0.395_061_728, epsilon = 1e-8);
    }

    #[test]
    fn idm_nonpositive_gap_is_strongly_negative() {
        let prm = idm(30.0, 2.0, 1.5, 2.0, 2.0);
        assert!(idm_accel(20.0, 0.0, -1.0, &prm) < -100.0);
    }

    #[test]
    fn idm_desired_gap_floors_at_s0() {
        // Fast-opening gap: the dynamic term is negative and must not shrink s*.
        let prm = idm(30.0, 1.0, 0.05, 1.0, 2.0);
        let a = idm_accel(10.0, -20.0, 4.0, &prm);
        let expected = 1.0 * (1.0 - (10.0f64 / 30.0).powi(4) - 0.25);
        assert_abs_diff_eq!(a, expected, epsilon = 1e-12);
    }

    #[test]
    fn idm_equilibrium_holds_for_a_thousand_steps() {
        let prm = idm(28.0, 2.0, 1.2, 2.0, 2.0);
        let v: f64 = 20.0;
        // a = 0 with dv = 0: s = s*/sqrt(1 - (v/v0)^4).
        let s = (prm.s0 + v * prm.time_gap) / (1.0 - (v / prm.v0).powi(4)).sqrt();
        let (mut x_f, mut v_f, mut x_l) = (0.0, v, s);
        for _ in 0..1000 {
            let a = idm_accel(v_f, v_f - v, x_l - x_f, &prm);
            assert!(a.abs() < 1e-9, "a = {a}");
            let next = v_f + a * 0.1;
            x_f += 0.5 * (v_f + next) * 0.1;
            v_f = next;
            x_l += v * 0.1;
        }
    }

    #[test]
    fn mobil_examples() {
        let th = |p, d| MobilParams {
            politeness: p,
            delta_a_th: d,
        };
        let flat = MobilAccels {
            a_c: 0.7,
            a_c_new: 0.7,
            a_n: 0.7,
            a_n_new: 0.7,
            a_o: 0.7,
            a_o_new: 0.7,
        };
        assert!(!mobil_decision(&flat, &th(0.5, 0.0), DEFAULT_B_SAFE));
        let gain = MobilAccels {
            a_c: 0.0,
            a_c_new: 0.5,
            a_n: 0.0,
            a_n_new: -0.6,
            a_o: 0.0,
            a_o_new: -0.4,
        };
        assert!(mobil_decision(&gain, &th(0.0, 0.3), DEFAULT_B_SAFE));
        assert!(!mobil_decision(&gain, &th(1.0, 0.3), DEFAULT_B_SAFE));
    }

    #[test]
    fn mobil_safety_guard_vetoes() {
        let acc = MobilAccels {
            a_c: -2.0,
            a_c_new: 1.0,
            a_n_new: -4.5,
            ..MobilAccels::default()
        };
        let prm = MobilParams {
            politeness: 0.0,
            delta_a_th: 0.1,
        };
        assert!(!mobil_decision(&acc, &prm, DEFAULT_B_SAFE));
        assert!(mobil_decision(&acc, &prm, 5.0));
    }

    #[test]
    fn av_speed_law() {
        let cfg = SimConfig::default();
        assert_abs_diff_eq!(av_speed_update(10.0, 5.0, &cfg), 9.7, epsilon = 1e-12);
        assert_eq!(av_speed_update(0.2, 5.0, &cfg), 0.0);
        assert_eq!(av_speed_update(cfg.v_max_av, 50.0, &cfg), cfg.v_max_av);
    }

    #[test]
    fn ttc_cases() {
        assert_eq!(ttc(20.0, 10.0), 2.0);
        assert_eq!(ttc(20.0, 0.0), f64::INFINITY);
        assert_eq!(ttc(20.0, -3.0), f64::INFINITY);
        assert_eq!(ttc(0.0, 5.0), 0.0);
    }

    #[test]
    fn criticality_branches() {
        let cfg = SimConfig::default();
        let base = EpisodeResult {
            min_ttc: f64::INFINITY,
            min_accel: -1.0,
            collision: false,
            lane_change_completed: false,
            duration: 1.0,
            critical: false,
        };
        assert!(criticality(&EpisodeResult { min_ttc: 1.5, ..base }, &cfg));
        assert!(!criticality(&base, &cfg));
        assert!(criticality(&EpisodeResult { min_accel: -6.5, ..base }, &cfg));
        assert!(criticality(&EpisodeResult { collision: true, ..base }, &cfg));
    }

    #[test]
    fn steady_state_is_not_critical() {
        let cfg = SimConfig {
            layout: vec![
                LayoutEntry::av(0, 500.0, 25.0),
                LayoutEntry::sv(1, 0, 0.0, 25.0),
                LayoutEntry::sv(3, 0, -300.0, 25.0),
                LayoutEntry::sv(4, 1, 900.0, 25.0),
                LayoutEntry::sv(2, 1, 600.0, 25.0),
                LayoutEntry::sv(5, 1, 300.0, 25.0),
            ],
            ..SimConfig::default()
        };
        let b = behaviors(idm(25.0, 2.0, 1.0, 2.0, 2.0), 0.0, 0.3);
        let res = run_episode(&b, &cfg);
        assert_eq!(res.min_ttc, f64::INFINITY);
        assert!(!res.critical);
        assert!(!res.lane_change_completed);
        assert_abs_diff_eq!(res.duration, cfg.t_max, epsilon = 1e-9);
    }

    #[test]
    fn constructed_cut_in_is_critical() {
        // SV2 sits next to the AV's 3 m gap and is boxed in by a stopped SV4,
        // so it cuts in on the first step. AV 25 m/s, SV2 20 m/s.
        let cfg = SimConfig {
            layout: vec![
                LayoutEntry::av(0, 0.0, 25.0),
                LayoutEntry::sv(2, 1, 8.0, 20.0),
                LayoutEntry::sv(4, 1, 15.0, 0.0),
                LayoutEntry::sv(1, 0, 400.0, 25.0),
                LayoutEntry::sv(3, 0, -200.0, 25.0),
                LayoutEntry::sv(5, 1, -200.0, 25.0),
            ],
            ..SimConfig::default()
        };
        let b = behaviors(idm(30.0, 2.0, 1.0, 2.0, 1.0), 0.0, 0.0);
        let (res, trace) = run_episode_traced(&b, &cfg);
        assert!(res.lane_change_completed);
        // First recorded state after the swap: gap 3 m, closing 5 m/s.
        let at_swap = trace.iter().find(|r| r.ttc.is_finite()).unwrap();
        assert!(at_swap.ttc <= 0.6 + 1e-9);
        assert!(res.min_ttc <= 0.6 + 1e-9);
        assert!(res.critical);
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = SimConfig::default();
        let b = behaviors(idm(27.0, 2.0, 0.5, 2.0, 1.5), 0.2, 0.1);
        assert_eq!(run_episode(&b, &cfg), run_episode(&b, &cfg));
    }

    #[test]
    fn default_config_validates() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            desired_gap: 15.0,
            ..SimConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().0, "desired_gap");
    }

    proptest! {
        #[test]
        fn idm_monotone_in_dv_and_gap(
            v in 0.0f64..35.0, dv in -10.0f64..10.0, ddv in 0.0f64..5.0,
            s in 0.5f64..200.0, ds in 0.0f64..50.0,
            alpha in 1.0f64..5.0, t in 0.05f64..2.0, b in 0.1f64..4.0, s0 in 0.1f64..3.0,
        ) {
            let prm = idm(27.0, alpha, t, b, s0);
            prop_assert!(idm_accel(v, dv + ddv, s, &prm) <= idm_accel(v, dv, s, &prm) + 1e-12);
            prop_assert!(idm_accel(v, dv, s + ds, &prm) >= idm_accel(v, dv, s, &prm) - 1e-12);
        }

        #[test]
        fn mobil_incentive_is_affine_in_politeness(
            own in -3.0f64..3.0, n in -3.0f64..3.0, o in -3.0f64..3.0,
            p1 in 0.0f64..1.0, p2 in 0.0f64..1.0,
        ) {
            let acc = MobilAccels { a_c: 0.0, a_c_new: own, a_n: 0.0, a_n_new: n, a_o: 0.0, a_o_new: o };
            let slope = n + o;
            let lhs = mobil_incentive(&acc, p2) - mobil_incentive(&acc, p1);
            prop_assert!((lhs - slope * (p2 - p1)).abs() < 1e-12);
            if slope < 0.0 && p2 > p1 {
                let th = MobilParams { politeness: p1, delta_a_th: 0.1 };
                let th2 = MobilParams { politeness: p2, ..th };
                if !mobil_decision(&acc, &th, DEFAULT_B_SAFE) {
                    prop_assert!(!mobil_decision(&acc, &th2, DEFAULT_B_SAFE));
                }
            }
        }

        #[test]
        fn speeds_never_negative(
            coords in proptest::collection::vec(0.0f64..=1.0, 7),
        ) {
            let space = crate::space::ParamSpace::shared();
            let p = crate::space::Point::new(coords).unwrap();
            let b = space.behaviors(&space.to_physical(&p).unwrap()).unwrap();
            let (_, trace) = run_episode_traced(&b, &SimConfig::default());
            for row in trace {
                prop_assert!(row.vehicles.iter().all(|v| v.speed >= 0.0));
            }
        }
    }
}
