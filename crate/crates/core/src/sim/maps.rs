//! Bundled track layouts.

use crate::sim::map::TrackMap;

/// Smallest closed loop: a 3x3 ring.
pub const SMALL_LOOP: &str = "\
aSb
s.s
cSd
";

/// Training-style loop with inward bends in both directions.
pub const MAP_A: &str = "\
aSSSb
s...s
cb.ad
.cSd.
";

/// Elongated evaluation loop.
pub const MAP_B: &str = "\
aSSb
s..s
cSSd
";

/// Evaluation loop with a chicane in the top-left corner.
pub const MAP_C: &str = "\
.aSb
ad.s
s..s
cSSd
";

pub fn small_loop() -> TrackMap {
    TrackMap::parse(SMALL_LOOP).expect("bundled map")
}

pub fn by_name(name: &str) -> Option<TrackMap> {
    let text = match name {
        "small" | "small_loop" => SMALL_LOOP,
        "a" | "map_a" => MAP_A,
        "b" | "map_b" => MAP_B,
        "c" | "map_c" => MAP_C,
        _ => return None,
    };
    Some(TrackMap::parse(text).expect("bundled map"))
}

pub const NAMES: [&str; 4] = ["small_loop", "map_a", "map_b", "map_c"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::map::{TileKind, TILE_SIZE};

    #[test]
    fn bundled_maps_parse() {
        for name in NAMES {
            let map = by_name(name).unwrap();
            assert_eq!(map.circuit().len(), map.road_tiles().count(), "{name}");
        }
        assert_eq!(by_name("map_a").unwrap().circuit().len(), 14);
    }

    /// Centerline continuity: walking the circuit, the exit point of each tile
    /// equals the entry point of the next one (in the next tile's travel sense).
    #[test]
    fn centerline_continuity_at_every_border() {
        for name in NAMES {
            let map = by_name(name).unwrap();
            let c = map.circuit();
            for i in 0..c.len() {
                let (a, b) = (c[i], c[(i + 1) % c.len()]);
                let ends_a = [map.point_at(a, 0.0, 0.0).0, map.point_at(a, 1.0, 0.0).0];
                let ends_b = [map.point_at(b, 0.0, 0.0).0, map.point_at(b, 1.0, 0.0).0];
                let shared = ends_a
                    .iter()
                    .any(|p| ends_b.iter().any(|q| (p.0 - q.0).abs() < 1e-12 && (p.1 - q.1).abs() < 1e-12));
                assert!(shared, "{name}: {a} -> {b}");
                assert!(map.kind(a) != TileKind::Grass);
            }
            assert!(TILE_SIZE == 1.0);
        }
    }
}
