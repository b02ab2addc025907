//! Tile grids and lane geometry.
//!
//! World frame: `x` grows with the column index, `y` grows upward, so the
//! first text line of a map is the top row. Tile `(col, row)` covers
//! `[col, col+1] x [row, row+1]` with `row` counted from the bottom.
//!
//! Each road tile carries a canonical centerline path between its two ports.
//! Straights run west->east or south->north; curves are quarter circles of
//! radius 0.5 centered on the tile corner between their ports, traversed
//! counter-clockwise. Lateral offsets are measured positive to the left of the
//! canonical direction. Traffic keeps right: the right-lane centerline sits
//! `lane_half_width` to the right of the road center in the direction of travel.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use crate::sim::SimError;

pub const TILE_SIZE: f64 = 1.0;
pub const LANE_HALF_WIDTH: f64 = 0.25;
/// Half-width of the paved road (both lanes).
pub const ROAD_HALF_WIDTH: f64 = 0.5;
const CURVE_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    North,
    East,
    South,
    West,
}

impl Port {
    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
        }
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Port::North => (0, 1),
            Port::South => (0, -1),
            Port::East => (1, 0),
            Port::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Tile corner a curve is centered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    NorthEast,
    NorthWest,
    SouthEast,
    SouthWest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileKind {
    Grass,
    Straight(Axis),
    Curve(Corner),
}

impl TileKind {
    pub fn from_char(c: char) -> Option<TileKind> {
        Some(match c {
            '.' => TileKind::Grass,
            'S' => TileKind::Straight(Axis::Horizontal),
            's' => TileKind::Straight(Axis::Vertical),
            // box-drawing order: a = ┌, b = ┐, c = └, d = ┘
            'a' => TileKind::Curve(Corner::SouthEast),
            'b' => TileKind::Curve(Corner::SouthWest),
            'c' => TileKind::Curve(Corner::NorthEast),
            'd' => TileKind::Curve(Corner::NorthWest),
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            TileKind::Grass => '.',
            TileKind::Straight(Axis::Horizontal) => 'S',
            TileKind::Straight(Axis::Vertical) => 's',
            TileKind::Curve(Corner::SouthEast) => 'a',
            TileKind::Curve(Corner::SouthWest) => 'b',
            TileKind::Curve(Corner::NorthEast) => 'c',
            TileKind::Curve(Corner::NorthWest) => 'd',
        }
    }

    pub fn is_road(self) -> bool {
        self != TileKind::Grass
    }

    /// Ports in canonical travel order (entry, exit).
    pub fn ports(self) -> Option<(Port, Port)> {
        Some(match self {
            TileKind::Grass => return None,
            TileKind::Straight(Axis::Horizontal) => (Port::West, Port::East),
            TileKind::Straight(Axis::Vertical) => (Port::South, Port::North),
            // counter-clockwise around the corner
            TileKind::Curve(Corner::SouthEast) => (Port::East, Port::South),
            TileKind::Curve(Corner::SouthWest) => (Port::South, Port::West),
            TileKind::Curve(Corner::NorthEast) => (Port::North, Port::East),
            TileKind::Curve(Corner::NorthWest) => (Port::West, Port::North),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub col: usize,
    pub row: usize,
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// Planar pose of the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// A point expressed in a tile's canonical lane frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    /// Signed lateral offset from the road center, positive left of the canonical direction.
    pub lateral: f64,
    /// Arc length along the road center from the tile's entry port.
    pub along: f64,
    /// Unit tangent of the canonical direction at the closest centerline point.
    pub tangent: (f64, f64),
    /// Curvature of the road center (0 for straights).
    pub curvature: f64,
    /// Whether the point lies on the paved surface of this tile's geometry.
    pub on_road: bool,
}

/// Result of a lane query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneInfo {
    /// Signed distance from the right-lane centerline, positive toward the road center.
    pub dist: f64,
    /// `<heading, tangent>`, in `[-1, 1]`.
    pub dot_dir: f64,
    pub in_right_lane: bool,
    pub on_track: bool,
    /// Unit tangent in the direction of travel.
    pub tangent: (f64, f64),
    /// Tile whose geometry was used.
    pub tile: Option<TileCoord>,
}

impl LaneInfo {
    /// Signed heading error (radians) relative to the travel tangent, positive when
    /// the robot points to the left of the lane direction.
    pub fn heading_error(&self, heading: f64) -> f64 {
        let (tx, ty) = self.tangent;
        let (hx, hy) = (heading.cos(), heading.sin());
        (tx * hy - ty * hx).atan2(tx * hx + ty * hy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMap {
    cols: usize,
    rows: usize,
    /// Row-major from the bottom row.
    tiles: Vec<TileKind>,
    /// Road tiles in circuit order following canonical ports from the first tile.
    circuit: Vec<TileCoord>,
}

impl TrackMap {
    /// Parse a tile-grid description: one character per tile, top row first.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<TrackMap, SimError> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if lines.is_empty() {
            return Err(SimError::MalformedMap("empty grid".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut tiles = vec![TileKind::Grass; cols * rows];
        for (i, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(SimError::MalformedMap(format!(
                    "line {} has {} tiles, expected {cols}",
                    i + 1,
                    line.chars().count()
                )));
            }
            let row = rows - 1 - i;
            for (col, ch) in line.chars().enumerate() {
                tiles[row * cols + col] = TileKind::from_char(ch).ok_or_else(|| {
                    SimError::MalformedMap(format!("unknown tile character {ch:?} at line {}", i + 1))
                })?;
            }
        }
        Self::from_tiles(cols, rows, tiles)
    }

    fn from_tiles(cols: usize, rows: usize, tiles: Vec<TileKind>) -> Result<TrackMap, SimError> {
        let mut map = TrackMap { cols, rows, tiles, circuit: Vec::new() };
        let road: Vec<TileCoord> = map.road_tiles().collect();
        if road.is_empty() {
            return Err(SimError::MalformedMap("map has no road tiles".into()));
        }
        for &t in &road {
            let (a, b) = map.kind(t).ports().expect("road tile");
            for port in [a, b] {
                let ok = map
                    .neighbor(t, port)
                    .and_then(|n| map.kind(n).ports())
                    .is_some_and(|(na, nb)| na == port.opposite() || nb == port.opposite());
                if !ok {
                    return Err(SimError::DanglingTile { tile: t, port });
                }
            }
        }
        // walk the loop from the first road tile
        let start = road[0];
        let mut circuit = vec![start];
        let mut current = start;
        let mut exit = map.kind(start).ports().unwrap().1;
        loop {
            let next = map.neighbor(current, exit).expect("validated");
            if next == start {
                break;
            }
            let (a, b) = map.kind(next).ports().unwrap();
            exit = if a == exit.opposite() { b } else { a };
            circuit.push(next);
            current = next;
            if circuit.len() > road.len() {
                return Err(SimError::MalformedMap("road does not close into a loop".into()));
            }
        }
        if circuit.len() != road.len() {
            return Err(SimError::DisconnectedCircuits {
                circuit: circuit.len(),
                road: road.len(),
            });
        }
        map.circuit = circuit;
        Ok(map)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn kind(&self, t: TileCoord) -> TileKind {
        self.tiles[t.row * self.cols + t.col]
    }

    pub fn road_tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (0..self.rows)
            .flat_map(move |row| (0..self.cols).map(move |col| TileCoord { col, row }))
            .filter(move |&t| self.kind(t).is_road())
    }

    /// Road tiles in loop order.
    pub fn circuit(&self) -> &[TileCoord] {
        &self.circuit
    }

    pub fn circuit_index(&self, t: TileCoord) -> Option<usize> {
        self.circuit.iter().position(|&c| c == t)
    }

    pub fn neighbor(&self, t: TileCoord, port: Port) -> Option<TileCoord> {
        let (dc, dr) = port.offset();
        let col = t.col as isize + dc;
        let row = t.row as isize + dr;
        (col >= 0 && row >= 0 && (col as usize) < self.cols && (row as usize) < self.rows)
            .then(|| TileCoord { col: col as usize, row: row as usize })
    }

    /// Tile containing a world point, if inside the grid.
    pub fn tile_at(&self, x: f64, y: f64) -> Option<TileCoord> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (col, row) = ((x / TILE_SIZE).floor() as usize, (y / TILE_SIZE).floor() as usize);
        (col < self.cols && row < self.rows).then_some(TileCoord { col, row })
    }

    /// Road tile whose geometry describes the point: the containing tile when it
    /// is road, otherwise the nearest road tile (by distance to its square).
    pub fn reference_tile(&self, x: f64, y: f64) -> TileCoord {
        if let Some(t) = self.tile_at(x, y) {
            if self.kind(t).is_road() {
                return t;
            }
        }
        let mut best = self.circuit[0];
        let mut best_d = f64::INFINITY;
        for &t in &self.circuit {
            let dx = (t.col as f64 - x).max(x - (t.col as f64 + 1.0)).max(0.0);
            let dy = (t.row as f64 - y).max(y - (t.row as f64 + 1.0)).max(0.0);
            let d = dx * dx + dy * dy;
            if d < best_d {
                best_d = d;
                best = t;
            }
        }
        best
    }

    /// Canonical road-center length of a tile.
    pub fn tile_length(&self, t: TileCoord) -> f64 {
        match self.kind(t) {
            TileKind::Grass => 0.0,
            TileKind::Straight(_) => TILE_SIZE,
            TileKind::Curve(_) => CURVE_RADIUS * FRAC_PI_2,
        }
    }

    /// Express a world point in the canonical lane frame of road tile `t`.
    pub fn local_frame(&self, t: TileCoord, x: f64, y: f64) -> LocalFrame {
        let (x0, y0) = (t.col as f64, t.row as f64);
        let inside = x >= x0 && x <= x0 + TILE_SIZE && y >= y0 && y <= y0 + TILE_SIZE;
        match self.kind(t) {
            TileKind::Grass => panic!("local_frame on grass tile {t}"),
            TileKind::Straight(Axis::Horizontal) => {
                let lateral = y - (y0 + 0.5);
                LocalFrame {
                    lateral,
                    along: x - x0,
                    tangent: (1.0, 0.0),
                    curvature: 0.0,
                    on_road: inside && lateral.abs() <= ROAD_HALF_WIDTH,
                }
            }
            TileKind::Straight(Axis::Vertical) => {
                let lateral = (x0 + 0.5) - x;
                LocalFrame {
                    lateral,
                    along: y - y0,
                    tangent: (0.0, 1.0),
                    curvature: 0.0,
                    on_road: inside && lateral.abs() <= ROAD_HALF_WIDTH,
                }
            }
            TileKind::Curve(corner) => {
                let (cx, cy, start_angle) = curve_center(corner, x0, y0);
                let (dx, dy) = (x - cx, y - cy);
                let r = dx.hypot(dy);
                let phi = dy.atan2(dx);
                let mut rel = phi - start_angle;
                while rel < -std::f64::consts::PI {
                    rel += 2.0 * std::f64::consts::PI;
                }
                while rel > std::f64::consts::PI {
                    rel -= 2.0 * std::f64::consts::PI;
                }
                let (s, c) = phi.sin_cos();
                LocalFrame {
                    lateral: CURVE_RADIUS - r,
                    along: CURVE_RADIUS * rel,
                    tangent: (-s, c),
                    curvature: 1.0 / CURVE_RADIUS,
                    on_road: inside && r <= CURVE_RADIUS + ROAD_HALF_WIDTH,
                }
            }
        }
    }

    /// World point at `fraction` in `[0, 1]` along the canonical path of `t`,
    /// offset `lateral` to the left. Returns the point and canonical tangent.
    pub fn point_at(&self, t: TileCoord, fraction: f64, lateral: f64) -> ((f64, f64), (f64, f64)) {
        let (x0, y0) = (t.col as f64, t.row as f64);
        match self.kind(t) {
            TileKind::Grass => panic!("point_at on grass tile {t}"),
            TileKind::Straight(Axis::Horizontal) => ((x0 + fraction, y0 + 0.5 + lateral), (1.0, 0.0)),
            TileKind::Straight(Axis::Vertical) => ((x0 + 0.5 - lateral, y0 + fraction), (0.0, 1.0)),
            TileKind::Curve(corner) => {
                let (cx, cy, a0) = curve_center(corner, x0, y0);
                let phi = a0 + fraction * FRAC_PI_2;
                let r = CURVE_RADIUS - lateral;
                let (s, c) = phi.sin_cos();
                ((cx + r * c, cy + r * s), (-s, c))
            }
        }
    }

    /// Lane geometry of a pose. The direction of travel is the canonical
    /// direction or its reverse, whichever the heading points along.
    pub fn lane_query(&self, pose: &Pose) -> LaneInfo {
        let t = self.reference_tile(pose.x, pose.y);
        let frame = self.local_frame(t, pose.x, pose.y);
        let (hx, hy) = (pose.heading.cos(), pose.heading.sin());
        let canonical_dot = hx * frame.tangent.0 + hy * frame.tangent.1;
        let sign = if canonical_dot >= 0.0 { 1.0 } else { -1.0 };
        let lateral = sign * frame.lateral;
        let dist = lateral + LANE_HALF_WIDTH;
        let on_track = frame.on_road;
        LaneInfo {
            dist,
            dot_dir: (sign * canonical_dot).clamp(-1.0, 1.0),
            in_right_lane: on_track && lateral <= 0.0,
            on_track,
            tangent: (sign * frame.tangent.0, sign * frame.tangent.1),
            tile: Some(t),
        }
    }

    /// Render the grid back to its text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in (0..self.rows).rev() {
            for col in 0..self.cols {
                s.push(self.kind(TileCoord { col, row }).to_char());
            }
            s.push('\n');
        }
        s
    }
}

/// Center and canonical start angle of a curve tile's arc.
fn curve_center(corner: Corner, x0: f64, y0: f64) -> (f64, f64, f64) {
    use std::f64::consts::PI;
    match corner {
        Corner::SouthEast => (x0 + 1.0, y0, FRAC_PI_2),
        Corner::SouthWest => (x0, y0, 0.0),
        Corner::NorthEast => (x0 + 1.0, y0 + 1.0, PI),
        Corner::NorthWest => (x0, y0 + 1.0, -FRAC_PI_2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RING: &str = "aSb\ns.s\ncSd\n";

    #[test]
    fn ring_is_closed_loop() {
        let map = TrackMap::parse(RING).unwrap();
        assert_eq!(map.road_tiles().count(), 8);
        assert_eq!(map.circuit().len(), 8);
        assert_eq!(map.to_text(), RING);
    }

    #[test]
    fn lone_straight_is_dangling() {
        let err = TrackMap::parse("...\n.S.\n...").unwrap_err();
        assert!(matches!(err, SimError::DanglingTile { .. }), "{err}");
    }

    #[test]
    fn malformed_grids() {
        assert!(matches!(TrackMap::parse(""), Err(SimError::MalformedMap(_))));
        assert!(matches!(TrackMap::parse("aSb\ns.\ncSd"), Err(SimError::MalformedMap(_))));
        assert!(matches!(TrackMap::parse("aXb\ns.s\ncSd"), Err(SimError::MalformedMap(_))));
    }

    #[test]
    fn two_loops_rejected() {
        let err = TrackMap::parse("ab.ab\ncd.cd").unwrap_err();
        assert!(matches!(err, SimError::DisconnectedCircuits { .. }), "{err}");
    }

    #[test]
    fn curve_endpoints_hit_edge_midpoints() {
        let map = TrackMap::parse(RING).unwrap();
        for t in map.road_tiles() {
            let (p0, _) = map.point_at(t, 0.0, 0.0);
            let (p1, _) = map.point_at(t, 1.0, 0.0);
            let (a, b) = map.kind(t).ports().unwrap();
            for (p, port) in [(p0, a), (p1, b)] {
                let (ex, ey) = edge_midpoint(t, port);
                assert!((p.0 - ex).abs() < 1e-12 && (p.1 - ey).abs() < 1e-12, "{t} {port:?} {p:?}");
            }
        }
    }

    pub(crate) fn edge_midpoint(t: TileCoord, port: Port) -> (f64, f64) {
        let (x0, y0) = (t.col as f64, t.row as f64);
        match port {
            Port::North => (x0 + 0.5, y0 + 1.0),
            Port::South => (x0 + 0.5, y0),
            Port::East => (x0 + 1.0, y0 + 0.5),
            Port::West => (x0, y0 + 0.5),
        }
    }

    #[test]
    fn straight_centerline_query() {
        let map = TrackMap::parse(RING).unwrap();
        // bottom straight (1, 0): eastbound right lane is at y = 0.25
        let info = map.lane_query(&Pose { x: 1.5, y: 0.25, heading: 0.0 });
        assert_eq!(info.dist, 0.0);
        assert_eq!(info.dot_dir, 1.0);
        assert!(info.in_right_lane && info.on_track);

        let perp = map.lane_query(&Pose { x: 1.5, y: 0.25, heading: FRAC_PI_2 });
        assert!(perp.dot_dir.abs() < 1e-15);

        // westbound on the same spot is the oncoming lane
        let wrong = map.lane_query(&Pose { x: 1.5, y: 0.25, heading: std::f64::consts::PI });
        assert!(!wrong.in_right_lane && wrong.on_track);
        assert!((wrong.dist - 0.5).abs() < 1e-12);
    }

    #[test]
    fn arc_centerline_query() {
        let map = TrackMap::parse(RING).unwrap();
        // bottom-right curve 'd' at (2, 0), centered on (2, 1); counter-clockwise travel
        // keeps the right lane on the outside, radius 0.75
        let t = TileCoord { col: 2, row: 0 };
        for f in [0.1, 0.35, 0.5, 0.9] {
            let ((x, y), (tx, ty)) = map.point_at(t, f, -LANE_HALF_WIDTH);
            let heading = ty.atan2(tx);
            let info = map.lane_query(&Pose { x, y, heading });
            // analytic: radius from (2, 1) must be exactly 0.75
            let r = (x - 2.0).hypot(y - 1.0);
            assert!((r - 0.75).abs() < 1e-12);
            assert!(info.dist.abs() < 1e-12, "{}", info.dist);
            assert!((info.dot_dir - 1.0).abs() < 1e-12);
            assert!(info.in_right_lane);
        }
    }

    #[test]
    fn outside_map_is_off_track() {
        let map = TrackMap::parse(RING).unwrap();
        let info = map.lane_query(&Pose { x: -0.2, y: 1.5, heading: 0.0 });
        assert!(!info.on_track);
        assert!(info.dist.is_finite() && info.dot_dir.abs() <= 1.0);
        let grass = map.lane_query(&Pose { x: 1.5, y: 1.5, heading: 0.0 });
        assert!(!grass.on_track);
        // curve tile beyond the outer edge (far corner)
        let corner = map.lane_query(&Pose { x: 2.95, y: 0.05, heading: 0.0 });
        assert!(!corner.on_track);
    }
}
