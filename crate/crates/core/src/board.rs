//! Dartboard geometry: the score map, region membership, region centers and
//! the square lattices used for numerical integration.
//!
//! Coordinates are millimetres with the origin at the board center and `y`
//! pointing up. Angles are "compass" degrees measured clockwise from `+y`,
//! so the segment at 12 o'clock spans `[-9°, 9°)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radius of the disk used for grids and sampling of the Miss region.
pub const BOARD_RADIUS: f64 = 230.0;

/// Angular width of one segment in degrees.
pub const SECTOR_DEG: f64 = 18.0;

pub const STANDARD_SEGMENT_ORDER: [u8; 20] = [20, 1, 18, 4, 13, 6, 10, 15, 2, 17, 3, 19, 7, 16, 8, 11, 14, 9, 12, 5];

#[derive(Debug, Error, PartialEq)]
pub enum BoardError {
    #[error("board radii must be strictly increasing and positive: {0:?}")]
    Radii([f64; 6]),
    #[error("segment order must be a permutation of 1..=20, got {0:?}")]
    SegmentOrder(Vec<u8>),
    #[error("unknown outcome label {0:?}")]
    Label(String),
    #[error("{0} is not a targetable region")]
    NotTargetable(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Point at radius `r` and compass angle `deg`.
    pub fn from_polar(r: f64, deg: f64) -> Self {
        let t = deg.to_radians();
        Point {
            x: r * t.sin(),
            y: r * t.cos(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Compass angle in `[0, 360)`.
    pub fn compass_deg(&self) -> f64 {
        let d = self.x.atan2(self.y).to_degrees();
        if d < 0.0 {
            d + 360.0
        } else {
            d
        }
    }

    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotate clockwise by `deg` compass degrees.
    pub fn rotate_cw(&self, deg: f64) -> Point {
        let t = deg.to_radians();
        let (s, c) = t.sin_cos();
        Point {
            x: self.x * c + self.y * s,
            y: -self.x * s + self.y * c,
        }
    }
}

/// One of the 63 things a dart can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Single(u8),
    Double(u8),
    Treble(u8),
    SingleBull,
    DoubleBull,
    Miss,
}

impl Outcome {
    pub const COUNT: usize = 63;

    /// Dense index: S1..S20 = 0..20, D1..D20 = 20..40, T1..T20 = 40..60,
    /// SB = 60, DB = 61, Miss = 62.
    pub fn index(self) -> usize {
        match self {
            Outcome::Single(n) => n as usize - 1,
            Outcome::Double(n) => 19 + n as usize,
            Outcome::Treble(n) => 39 + n as usize,
            Outcome::SingleBull => 60,
            Outcome::DoubleBull => 61,
            Outcome::Miss => 62,
        }
    }

    pub fn from_index(i: usize) -> Outcome {
        match i {
            0..=19 => Outcome::Single(i as u8 + 1),
            20..=39 => Outcome::Double(i as u8 - 19),
            40..=59 => Outcome::Treble(i as u8 - 39),
            60 => Outcome::SingleBull,
            61 => Outcome::DoubleBull,
            62 => Outcome::Miss,
            _ => panic!("outcome index {i} out of range"),
        }
    }

    pub fn all() -> impl Iterator<Item = Outcome> {
        (0..Self::COUNT).map(Outcome::from_index)
    }

    /// Points scored by a dart with this outcome.
    pub fn numeric_score(self) -> u32 {
        match self {
            Outcome::Single(n) => n as u32,
            Outcome::Double(n) => 2 * n as u32,
            Outcome::Treble(n) => 3 * n as u32,
            Outcome::SingleBull => 25,
            Outcome::DoubleBull => 50,
            Outcome::Miss => 0,
        }
    }

    pub fn is_double(self) -> bool {
        matches!(self, Outcome::Double(_) | Outcome::DoubleBull)
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Single(n) => write!(f, "S{n}"),
            Outcome::Double(n) => write!(f, "D{n}"),
            Outcome::Treble(n) => write!(f, "T{n}"),
            Outcome::SingleBull => f.write_str("SB"),
            Outcome::DoubleBull => f.write_str("DB"),
            Outcome::Miss => f.write_str("M"),
        }
    }
}

impl FromStr for Outcome {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || BoardError::Label(s.to_string());
        match s {
            "SB" => return Ok(Outcome::SingleBull),
            "DB" => return Ok(Outcome::DoubleBull),
            "M" => return Ok(Outcome::Miss),
            _ => {}
        }
        let (kind, num) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        if num.starts_with('0') || num.starts_with('+') {
            return Err(bad());
        }
        let n: u8 = num.parse().map_err(|_| bad())?;
        if !(1..=20).contains(&n) {
            return Err(bad());
        }
        match kind {
            "S" => Ok(Outcome::Single(n)),
            "D" => Ok(Outcome::Double(n)),
            "T" => Ok(Outcome::Treble(n)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An aimable region: any outcome except Miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetRegion(Outcome);

impl TargetRegion {
    pub const COUNT: usize = 62;

    pub fn new(o: Outcome) -> Result<Self, BoardError> {
        match o {
            Outcome::Miss => Err(BoardError::NotTargetable(o)),
            o => Ok(TargetRegion(o)),
        }
    }

    pub fn outcome(self) -> Outcome {
        self.0
    }

    pub fn index(self) -> usize {
        self.0.index()
    }

    pub fn all() -> impl Iterator<Item = TargetRegion> {
        (0..Self::COUNT).map(|i| TargetRegion(Outcome::from_index(i)))
    }

    pub fn treble(n: u8) -> Self {
        TargetRegion(Outcome::Treble(n))
    }

    pub fn double(n: u8) -> Self {
        TargetRegion(Outcome::Double(n))
    }

    pub fn single(n: u8) -> Self {
        TargetRegion(Outcome::Single(n))
    }

    pub const DOUBLE_BULL: TargetRegion = TargetRegion(Outcome::DoubleBull);
    pub const SINGLE_BULL: TargetRegion = TargetRegion(Outcome::SingleBull);
}

impl fmt::Display for TargetRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for TargetRegion {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TargetRegion::new(s.parse()?)
    }
}

impl Serialize for TargetRegion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TargetRegion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A polar rectangle `r_in < r <= r_out`, compass angle in `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnularSector {
    pub r_in: f64,
    pub r_out: f64,
    pub start_deg: f64,
    pub width_deg: f64,
}

impl AnnularSector {
    pub fn area(&self) -> f64 {
        0.5 * (self.r_out * self.r_out - self.r_in * self.r_in) * self.width_deg.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub r_db: f64,
    pub r_sb: f64,
    pub r_treble_inner: f64,
    pub r_treble_outer: f64,
    pub r_double_inner: f64,
    pub r_double_outer: f64,
    /// Segment numbers clockwise, starting with the segment centered at 12 o'clock.
    pub segment_order: Vec<u8>,
}

impl Default for BoardSpec {
    fn default() -> Self {
        BoardSpec {
            r_db: 6.35,
            r_sb: 15.9,
            r_treble_inner: 99.0,
            r_treble_outer: 107.0,
            r_double_inner: 162.0,
            r_double_outer: 170.0,
            segment_order: STANDARD_SEGMENT_ORDER.to_vec(),
        }
    }
}

impl BoardSpec {
    pub fn validate(&self) -> Result<(), BoardError> {
        let r = self.radii();
        let increasing = r[0] > 0.0 && r.windows(2).all(|w| w[0] < w[1]) && r.iter().all(|x| x.is_finite());
        if !increasing {
            return Err(BoardError::Radii(r));
        }
        let mut seen = [false; 21];
        let perm = self.segment_order.len() == 20
            && self.segment_order.iter().all(|&n| {
                let ok = (1..=20).contains(&n) && !seen[n as usize];
                if ok {
                    seen[n as usize] = true;
                }
                ok
            });
        if !perm {
            return Err(BoardError::SegmentOrder(self.segment_order.clone()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let spec: BoardSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn radii(&self) -> [f64; 6] {
        [
            self.r_db,
            self.r_sb,
            self.r_treble_inner,
            self.r_treble_outer,
            self.r_double_inner,
            self.r_double_outer,
        ]
    }

    /// Position of segment `n` in `segment_order`.
    pub fn sector_index(&self, n: u8) -> usize {
        self.segment_order
            .iter()
            .position(|&s| s == n)
            .unwrap_or_else(|| panic!("segment {n} missing from segment order"))
    }

    /// Compass angle of the center of segment `n`.
    pub fn sector_center_deg(&self, n: u8) -> f64 {
        self.sector_index(n) as f64 * SECTOR_DEG
    }

    /// Segment number under compass angle `deg`. A boundary angle belongs to
    /// the clockwise-later sector.
    pub fn segment_at_deg(&self, deg: f64) -> u8 {
        let k = ((deg + SECTOR_DEG / 2.0) / SECTOR_DEG).floor() as i64;
        self.segment_order[k.rem_euclid(20) as usize]
    }

    /// The score map: which outcome a dart landing at `p` produces. A radius
    /// equal to a wire radius belongs to the inner band.
    pub fn score_at(&self, p: Point) -> Outcome {
        let r = p.radius();
        if r <= self.r_db {
            return Outcome::DoubleBull;
        }
        if r <= self.r_sb {
            return Outcome::SingleBull;
        }
        if r > self.r_double_outer {
            return Outcome::Miss;
        }
        let n = self.segment_at_deg(p.compass_deg());
        if r <= self.r_treble_inner {
            Outcome::Single(n)
        } else if r <= self.r_treble_outer {
            Outcome::Treble(n)
        } else if r <= self.r_double_inner {
            Outcome::Single(n)
        } else {
            Outcome::Double(n)
        }
    }

    /// Center of a target region: midpoint of its radial band at the center
    /// angle of its sector. Singles use the inner (larger) bed; SB sits on the
    /// segment-20 angle.
    pub fn region_center(&self, t: TargetRegion) -> Point {
        match t.outcome() {
            Outcome::DoubleBull => Point::ORIGIN,
            Outcome::SingleBull => Point::from_polar(0.5 * (self.r_db + self.r_sb), self.sector_center_deg(20)),
            Outcome::Single(n) => self.single_bed_centers(n)[0],
            Outcome::Treble(n) => Point::from_polar(0.5 * (self.r_treble_inner + self.r_treble_outer), self.sector_center_deg(n)),
            Outcome::Double(n) => Point::from_polar(0.5 * (self.r_double_inner + self.r_double_outer), self.sector_center_deg(n)),
            Outcome::Miss => unreachable!("Miss is not targetable"),
        }
    }

    /// Centers of the inner and outer single beds of segment `n`, in that order.
    pub fn single_bed_centers(&self, n: u8) -> [Point; 2] {
        let deg = self.sector_center_deg(n);
        [
            Point::from_polar(0.5 * (self.r_sb + self.r_treble_inner), deg),
            Point::from_polar(0.5 * (self.r_treble_outer + self.r_double_inner), deg),
        ]
    }

    /// The two segments adjacent to `n`, larger number first.
    pub fn neighbors(&self, n: u8) -> (u8, u8) {
        let k = self.sector_index(n);
        let a = self.segment_order[(k + 19) % 20];
        let b = self.segment_order[(k + 1) % 20];
        (a.max(b), a.min(b))
    }

    /// The outcomes recorded for darts aimed at `t`, in the fixed order used by
    /// every count vector.
    pub fn outcome_set(&self, t: TargetRegion) -> Vec<Outcome> {
        use Outcome::*;
        match t.outcome() {
            Treble(n) => {
                let (a, b) = self.neighbors(n);
                vec![Treble(n), Single(n), Treble(a), Single(a), Treble(b), Single(b)]
            }
            Double(n) => {
                let (a, b) = self.neighbors(n);
                vec![Double(n), Single(n), Double(a), Single(a), Double(b), Single(b), Miss]
            }
            Single(n) => {
                let (a, b) = self.neighbors(n);
                vec![Single(n), Single(a), Single(b)]
            }
            DoubleBull => {
                let mut v = vec![DoubleBull, SingleBull];
                v.extend((1..=20).map(Single));
                v
            }
            SingleBull => {
                let mut v = vec![SingleBull, DoubleBull];
                v.extend((1..=20).map(Single));
                v
            }
            Miss => unreachable!("Miss is not targetable"),
        }
    }

    /// The region of the plane scoring `o`, as a union of polar rectangles.
    /// Miss is clipped to the `BOARD_RADIUS` disk.
    pub fn pieces(&self, o: Outcome) -> Vec<AnnularSector> {
        let sector = |n: u8, r_in: f64, r_out: f64| AnnularSector {
            r_in,
            r_out,
            start_deg: self.sector_center_deg(n) - SECTOR_DEG / 2.0,
            width_deg: SECTOR_DEG,
        };
        let ring = |r_in: f64, r_out: f64| AnnularSector {
            r_in,
            r_out,
            start_deg: 0.0,
            width_deg: 360.0,
        };
        match o {
            Outcome::DoubleBull => vec![ring(0.0, self.r_db)],
            Outcome::SingleBull => vec![ring(self.r_db, self.r_sb)],
            Outcome::Single(n) => vec![
                sector(n, self.r_sb, self.r_treble_inner),
                sector(n, self.r_treble_outer, self.r_double_inner),
            ],
            Outcome::Treble(n) => vec![sector(n, self.r_treble_inner, self.r_treble_outer)],
            Outcome::Double(n) => vec![sector(n, self.r_double_inner, self.r_double_outer)],
            Outcome::Miss => vec![ring(self.r_double_outer, BOARD_RADIUS)],
        }
    }

    pub fn area(&self, o: Outcome) -> f64 {
        self.pieces(o).iter().map(AnnularSector::area).sum()
    }

    /// Centers of lattice cells at `resolution` over `[-R, R]^2` that score `o`.
    pub fn cells_of(&self, o: Outcome, resolution: f64) -> Vec<Point> {
        Lattice::new(self, resolution, BOARD_RADIUS).cells_of(o)
    }
}

/// A square lattice of cell centers `(i * res, j * res)` for
/// `i, j in -n..=n`, each labelled with its outcome.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub resolution: f64,
    pub half_cells: i32,
    labels: Vec<u8>,
}

impl Lattice {
    pub fn new(spec: &BoardSpec, resolution: f64, half_extent: f64) -> Self {
        assert!(resolution > 0.0, "lattice resolution must be positive");
        let n = (half_extent / resolution).round() as i32;
        let side = (2 * n + 1) as usize;
        let mut labels = Vec::with_capacity(side * side);
        for j in -n..=n {
            for i in -n..=n {
                let p = Point::new(i as f64 * resolution, j as f64 * resolution);
                labels.push(spec.score_at(p).index() as u8);
            }
        }
        Lattice {
            resolution,
            half_cells: n,
            labels,
        }
    }

    pub fn side(&self) -> usize {
        (2 * self.half_cells + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    /// Label index at integer lattice coordinates, `None` off the lattice.
    #[inline]
    pub fn label_at(&self, i: i32, j: i32) -> Option<u8> {
        let n = self.half_cells;
        if i < -n || i > n || j < -n || j > n {
            return None;
        }
        let side = 2 * n + 1;
        Some(self.labels[((j + n) * side + (i + n)) as usize])
    }

    /// Raw labels, row-major from the bottom row.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Position of `(i, j)` in `labels()`; the caller keeps it on the lattice.
    #[inline]
    pub fn flat_index(&self, i: i32, j: i32) -> isize {
        let n = self.half_cells;
        ((j + n) * (2 * n + 1) + (i + n)) as isize
    }

    pub fn point(&self, i: i32, j: i32) -> Point {
        Point::new(i as f64 * self.resolution, j as f64 * self.resolution)
    }

    /// All cells as `(point, outcome index)` in row-major order (bottom row first).
    pub fn cells(&self) -> impl Iterator<Item = (Point, u8)> + '_ {
        let n = self.half_cells;
        let side = self.side() as i32;
        self.labels.iter().enumerate().map(move |(k, &l)| {
            let k = k as i32;
            (self.point(k % side - n, k / side - n), l)
        })
    }

    pub fn cells_of(&self, o: Outcome) -> Vec<Point> {
        let want = o.index() as u8;
        self.cells().filter(|&(_, l)| l == want).map(|(p, _)| p).collect()
    }
}
