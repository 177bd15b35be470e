//! Scripted UGV formation programs.
//!
//! A manoeuvre is a sequence of segments. Each segment moves the formation
//! centre along a piecewise-linear track at constant speed while the formation
//! scale ramps linearly between its end values. Fixed-altitude segments hold
//! the scale, climb segments grow it and descend segments shrink it, so the
//! altitude needed to keep the formation framed follows the scale.

use serde::{Deserialize, Serialize};

use super::{Arena, Point2, SimError, UGV_COUNT};

/// Circumradius of the UGV triangle at scale 1, in metres.
pub const FORMATION_BASE_RADIUS: f64 = 0.5;

const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManoeuvreKind {
    FixedAltitude,
    Climb,
    Descend,
    Combined,
}

impl ManoeuvreKind {
    pub const PRIMITIVES: [ManoeuvreKind; 3] =
        [ManoeuvreKind::FixedAltitude, ManoeuvreKind::Climb, ManoeuvreKind::Descend];

    pub fn is_primitive(self) -> bool {
        self != ManoeuvreKind::Combined
    }

    pub fn name(self) -> &'static str {
        match self {
            ManoeuvreKind::FixedAltitude => "fixed_altitude",
            ManoeuvreKind::Climb => "climb",
            ManoeuvreKind::Descend => "descend",
            ManoeuvreKind::Combined => "combined",
        }
    }
}

impl std::fmt::Display for ManoeuvreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ManoeuvreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "fixed_altitude" | "fixed" => Ok(ManoeuvreKind::FixedAltitude),
            "climb" => Ok(ManoeuvreKind::Climb),
            "descend" => Ok(ManoeuvreKind::Descend),
            "combined" => Ok(ManoeuvreKind::Combined),
            other => Err(format!("unknown manoeuvre `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub kind: ManoeuvreKind,
    /// Seconds.
    pub duration: f64,
    /// Formation-centre waypoints in metres.
    pub path: Vec<Point2>,
    /// Formation scale at the start and end of the segment.
    pub scale: [f64; 2],
}

impl Segment {
    fn validate(&self, index: usize) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidManoeuvre(format!("segment {index}: {msg}")));
        if !self.kind.is_primitive() {
            return fail("segments must be fixed_altitude, climb or descend".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail(format!("duration must be positive, got {}", self.duration));
        }
        if self.path.is_empty() || !self.path.iter().all(|p| p.is_finite()) {
            return fail("path needs at least one finite waypoint".into());
        }
        let [s0, s1] = self.scale;
        if !(s0 > 0.0 && s1 > 0.0 && s0.is_finite() && s1.is_finite()) {
            return fail(format!("scale must be positive, got {s0}..{s1}"));
        }
        let ok = match self.kind {
            ManoeuvreKind::FixedAltitude => s0 == s1,
            ManoeuvreKind::Climb => s1 > s0,
            ManoeuvreKind::Descend => s1 < s0,
            ManoeuvreKind::Combined => false,
        };
        if !ok {
            return fail(format!("scale {s0}..{s1} does not match a {} segment", self.kind));
        }
        Ok(())
    }

    fn length(&self) -> f64 {
        self.path.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Point at arc-length fraction `w` of the track.
    fn center_at(&self, w: f64) -> Point2 {
        let total = self.length();
        if total == 0.0 || w <= 0.0 {
            return self.path[0];
        }
        if w >= 1.0 {
            return *self.path.last().unwrap();
        }
        let mut remaining = w * total;
        for pair in self.path.windows(2) {
            let len = pair[0].distance(pair[1]);
            if remaining <= len && len > 0.0 {
                return pair[0].lerp(pair[1], remaining / len);
            }
            remaining -= len;
        }
        *self.path.last().unwrap()
    }

    fn scale_at(&self, w: f64) -> f64 {
        let [s0, s1] = self.scale;
        s0 + (s1 - s0) * w.clamp(0.0, 1.0)
    }
}

/// A validated formation program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ManoeuvreSpec {
    kind: ManoeuvreKind,
    segments: Vec<Segment>,
    /// Rotation of the UGV triangle (radians).
    orientation: f64,
    starts: Vec<f64>,
    duration: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: ManoeuvreKind,
    segments: Vec<Segment>,
    #[serde(default)]
    orientation: f64,
}

impl TryFrom<RawSpec> for ManoeuvreSpec {
    type Error = SimError;
    fn try_from(raw: RawSpec) -> Result<Self, SimError> {
        ManoeuvreSpec::new(raw.kind, raw.segments, raw.orientation)
    }
}

impl From<ManoeuvreSpec> for RawSpec {
    fn from(spec: ManoeuvreSpec) -> Self {
        RawSpec { kind: spec.kind, segments: spec.segments, orientation: spec.orientation }
    }
}

impl ManoeuvreSpec {
    pub fn new(kind: ManoeuvreKind, segments: Vec<Segment>, orientation: f64) -> Result<Self, SimError> {
        if segments.is_empty() {
            return Err(SimError::InvalidManoeuvre("no segments".into()));
        }
        if !orientation.is_finite() {
            return Err(SimError::InvalidManoeuvre("orientation must be finite".into()));
        }
        for (i, seg) in segments.iter().enumerate() {
            seg.validate(i)?;
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            let gap = prev.path.last().unwrap().distance(next.path[0]);
            if gap > CONTINUITY_TOL || (prev.scale[1] - next.scale[0]).abs() > CONTINUITY_TOL {
                return Err(SimError::InvalidManoeuvre(format!(
                    "segments {i} and {} are not continuous",
                    i + 1
                )));
            }
        }
        if kind.is_primitive() {
            if segments.iter().any(|s| s.kind != kind) {
                return Err(SimError::InvalidManoeuvre(format!("a {kind} manoeuvre may only hold {kind} segments")));
            }
        } else {
            let first = segments[0].kind;
            if segments.iter().all(|s| s.kind == first) {
                return Err(SimError::InvalidManoeuvre(
                    "a combined manoeuvre needs at least two kinds of segment".into(),
                ));
            }
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            starts.push(acc);
            acc += s.duration;
        }
        Ok(Self { kind, segments, orientation, starts, duration: acc })
    }

    /// Default program for `kind`, laid out relative to the arena so the same
    /// shape fits both presets.
    pub fn preset(kind: ManoeuvreKind, arena: &Arena) -> Self {
        let (hx, hy) = arena.half_extents();
        let o = arena.center();
        let at = |u: f64, v: f64| Point2::new(o.x + 0.45 * hx * u, o.y + 0.45 * hy * v);
        let seg = |kind, duration, path: Vec<Point2>, scale| Segment { kind, duration, path, scale };
        let segments = match kind {
            ManoeuvreKind::FixedAltitude => vec![seg(
                kind,
                53.0,
                vec![at(-1.0, -1.0), at(1.0, -1.0), at(1.0, 1.0), at(-1.0, 1.0), at(-1.0, -1.0)],
                [1.2, 1.2],
            )],
            ManoeuvreKind::Climb => vec![seg(kind, 23.45, vec![at(-1.0, 0.0), at(1.0, 0.0)], [0.8, 1.9])],
            ManoeuvreKind::Descend => vec![seg(kind, 24.5, vec![at(0.0, -1.0), at(0.0, 1.0)], [1.9, 0.8])],
            ManoeuvreKind::Combined => vec![
                seg(ManoeuvreKind::FixedAltitude, 6.3, vec![at(-1.0, -1.0), at(0.0, -1.0)], [1.0, 1.0]),
                seg(ManoeuvreKind::Climb, 7.0, vec![at(0.0, -1.0), at(0.5, -0.6)], [1.0, 1.33]),
                seg(ManoeuvreKind::FixedAltitude, 7.0, vec![at(0.5, -0.6), at(0.3, 0.4)], [1.33, 1.33]),
                seg(ManoeuvreKind::Descend, 7.0, vec![at(0.3, 0.4), at(-0.3, 0.6)], [1.33, 1.0]),
            ],
        };
        Self::new(kind, segments, 0.0).expect("preset manoeuvres are valid")
    }

    /// Copy with the triangle rotated to `orientation` and the tracks mirrored
    /// about `pivot` on the selected axes.
    pub fn randomized_case(&self, orientation: f64, pivot: Point2, flip_x: bool, flip_y: bool) -> Self {
        let mirror = |p: Point2| {
            Point2::new(
                if flip_x { 2.0 * pivot.x - p.x } else { p.x },
                if flip_y { 2.0 * pivot.y - p.y } else { p.y },
            )
        };
        let segments = self
            .segments
            .iter()
            .map(|s| Segment { path: s.path.iter().copied().map(mirror).collect(), ..s.clone() })
            .collect();
        Self::new(self.kind, segments, orientation).expect("mirroring preserves validity")
    }

    pub fn kind(&self) -> ManoeuvreKind {
        self.kind
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Times at which one segment hands over to the next.
    pub fn boundaries(&self) -> &[f64] {
        &self.starts[1..]
    }

    /// Number of simulator steps of size `dt` covering the manoeuvre.
    pub fn steps(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize
    }

    fn locate(&self, t: f64) -> (&Segment, f64) {
        let t = t.clamp(0.0, self.duration);
        let idx = match self.starts.iter().rposition(|&s| s <= t) {
            Some(i) => i,
            None => 0,
        };
        let seg = &self.segments[idx];
        (seg, ((t - self.starts[idx]) / seg.duration).clamp(0.0, 1.0))
    }

    pub fn center_at(&self, t: f64) -> Point2 {
        let (seg, w) = self.locate(t);
        seg.center_at(w)
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        let (seg, w) = self.locate(t);
        seg.scale_at(w)
    }

    /// Segment kind active at time `t`.
    pub fn kind_at(&self, t: f64) -> ManoeuvreKind {
        self.locate(t).0.kind
    }
}

/// Scripted UGV positions at time `t` (clamped to the manoeuvre span).
pub fn formation_positions(spec: &ManoeuvreSpec, t: f64) -> [Point2; UGV_COUNT] {
    let center = spec.center_at(t);
    let radius = FORMATION_BASE_RADIUS * spec.scale_at(t);
    std::array::from_fn(|i| {
        let angle = std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
        center + Point2::new(radius, 0.0).rotated(angle + spec.orientation)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{enclosing_circle, Preset};

    fn pairwise(p: &[Point2; 3]) -> [f64; 3] {
        [p[0].distance(p[1]), p[1].distance(p[2]), p[2].distance(p[0])]
    }

    #[test]
    fn fixed_altitude_keeps_shape() {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::FixedAltitude, &Arena::preset(Preset::Sim));
        let d0 = pairwise(&formation_positions(&spec, 0.0));
        for k in 0..50 {
            let d = pairwise(&formation_positions(&spec, k as f64 * 1.03));
            for i in 0..3 {
                assert!((d[i] - d0[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn climb_grows_and_descend_shrinks() {
        let arena = Arena::preset(Preset::Sim);
        for (kind, grows) in [(ManoeuvreKind::Climb, true), (ManoeuvreKind::Descend, false)] {
            let spec = ManoeuvreSpec::preset(kind, &arena);
            let mut prev = enclosing_circle(&formation_positions(&spec, 0.0)).unwrap().radius;
            for k in 1..=100 {
                let t = spec.duration() * k as f64 / 100.0;
                let r = enclosing_circle(&formation_positions(&spec, t)).unwrap().radius;
                if grows {
                    assert!(r >= prev - 1e-12);
                } else {
                    assert!(r <= prev + 1e-12);
                }
                prev = r;
            }
        }
    }

    #[test]
    fn combined_is_continuous_at_boundaries() {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Combined, &Arena::preset(Preset::Sim));
        assert_eq!(spec.boundaries().len(), 3);
        for &b in spec.boundaries() {
            let left = formation_positions(&spec, b - 1e-12);
            let right = formation_positions(&spec, b);
            for i in 0..3 {
                assert!(left[i].distance(right[i]) < 1e-9);
            }
        }
    }

    #[test]
    fn time_is_clamped() {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Climb, &Arena::preset(Preset::Lab));
        assert_eq!(formation_positions(&spec, -3.0), formation_positions(&spec, 0.0));
        assert_eq!(formation_positions(&spec, 1e6), formation_positions(&spec, spec.duration()));
    }

    #[test]
    fn presets_stay_inside_their_arena() {
        for preset in [Preset::Sim, Preset::Lab] {
            let arena = Arena::preset(preset);
            for kind in [ManoeuvreKind::FixedAltitude, ManoeuvreKind::Climb, ManoeuvreKind::Descend, ManoeuvreKind::Combined] {
                let spec = ManoeuvreSpec::preset(kind, &arena);
                for k in 0..=400 {
                    for p in formation_positions(&spec, spec.duration() * k as f64 / 400.0) {
                        assert!(arena.contains(p), "{preset:?} {kind} leaves arena at {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_programs_are_rejected() {
        let seg = |kind, path: Vec<Point2>, scale| Segment { kind, duration: 1.0, path, scale };
        let bad_scale = ManoeuvreSpec::new(
            ManoeuvreKind::Climb,
            vec![seg(ManoeuvreKind::Climb, vec![Point2::ORIGIN], [1.0, 0.5])],
            0.0,
        );
        assert!(bad_scale.is_err());
        let gap = ManoeuvreSpec::new(
            ManoeuvreKind::Combined,
            vec![
                seg(ManoeuvreKind::FixedAltitude, vec![Point2::ORIGIN, Point2::new(1.0, 0.0)], [1.0, 1.0]),
                seg(ManoeuvreKind::Climb, vec![Point2::new(1.5, 0.0)], [1.0, 2.0]),
            ],
            0.0,
        );
        assert!(gap.is_err());
        let single_kind = ManoeuvreSpec::new(
            ManoeuvreKind::Combined,
            vec![seg(ManoeuvreKind::Climb, vec![Point2::ORIGIN], [1.0, 2.0])],
            0.0,
        );
        assert!(single_kind.is_err());
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Combined, &Arena::preset(Preset::Sim));
        let text = serde_json::to_string(&spec).unwrap();
        let back: ManoeuvreSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let broken = text.replace("\"climb\"", "\"descend\"");
        assert!(serde_json::from_str::<ManoeuvreSpec>(&broken).is_err());
    }
}
