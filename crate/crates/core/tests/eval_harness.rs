use std::sync::Arc;

use lanedqn::camera::Material;
use lanedqn::eval::{
    lap_completed, rasterize_overlay, run_success_trials, run_trial, tile_distance, ConstantDriver, OracleDriver,
    OverlayStyle,
};
use lanedqn::sim::{maps, Pose, SimConfig, TrackMap};

const DT: f64 = 1.0 / 30.0;

fn long_loop() -> TrackMap {
    TrackMap::parse("aSSSSSSSSSSSSb\ncSSSSSSSSSSSSd\n").unwrap()
}

fn oracle_lap(map: &Arc<TrackMap>) -> Vec<Pose> {
    let spawn = Pose { x: 1.5, y: 0.25, heading: 0.0 };
    let t = run_trial(map, &SimConfig::default(), spawn, &mut OracleDriver::default()).unwrap();
    assert!(t.lap_completed);
    t.trace
}

#[test]
fn oracle_driver_completes_every_trial_on_bundled_maps() {
    for name in maps::NAMES {
        let map = Arc::new(maps::by_name(name).unwrap());
        let r = run_success_trials(name, &map, &SimConfig::default(), &mut OracleDriver::default(), 50, 9).unwrap();
        let failed: Vec<_> = r.trials.iter().filter(|t| !t.lap_completed).map(|t| (t.spawn, t.steps, t.left_track)).collect();
        assert_eq!(r.successes, 50, "{name}: {failed:?}");
    }
}

#[test]
fn full_loop_counts_half_loop_does_not() {
    let map = Arc::new(maps::small_loop());
    let trace = oracle_lap(&map);
    assert!(lap_completed(&trace, &map));
    assert!(!lap_completed(&trace[..trace.len() / 2], &map));
}

#[test]
fn single_off_track_step_voids_the_lap() {
    let map = Arc::new(maps::small_loop());
    let mut trace = oracle_lap(&map);
    let mid = trace.len() / 2;
    trace[mid] = Pose { x: 1.5, y: 1.5, ..trace[mid] };
    assert!(!lap_completed(&trace, &map));
}

#[test]
fn cruise_for_thirty_seconds_passes_nine_tiles() {
    let map = long_loop();
    // 0.3 units/s from the middle of a tile: boundaries at x = 2..=10
    let trace: Vec<Pose> = (0..=900).map(|i| Pose { x: 1.5 + 0.01 * i as f64, y: 0.25, heading: 0.0 }).collect();
    assert_eq!(tile_distance(&trace, &map, 30.0, DT), 9);
}

#[test]
fn tile_distance_is_monotone_and_bounded_by_laps() {
    let map = Arc::new(maps::by_name("map_a").unwrap());
    let trace = oracle_lap(&map);
    let mut last = 0;
    for secs in [1.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
        let d = tile_distance(&trace, &map, secs, DT);
        assert!(d >= last);
        last = d;
    }
    let window = trace.len() as f64 * DT;
    assert!(tile_distance(&trace, &map, window, DT) >= map.circuit().len());
}

#[test]
fn straight_driver_never_laps_an_oval() {
    let map = Arc::new(maps::by_name("map_b").unwrap());
    let r = run_success_trials("map_b", &map, &SimConfig::default(), &mut ConstantDriver(2), 20, 4).unwrap();
    assert_eq!(r.successes, 0);
    assert!(r.trials.iter().all(|t| t.left_track));
}

#[test]
fn reports_are_deterministic() {
    let map = Arc::new(maps::by_name("map_c").unwrap());
    let a = run_success_trials("c", &map, &SimConfig::default(), &mut OracleDriver::default(), 10, 77).unwrap();
    let b = run_success_trials("c", &map, &SimConfig::default(), &mut OracleDriver::default(), 10, 77).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_trace_overlay_is_plain_map() {
    let map = maps::small_loop();
    let style = OverlayStyle::default();
    let img = rasterize_overlay(&[], &map, &style);
    assert_eq!((img.width, img.height), (3 * style.scale, 3 * style.scale));
    assert!(!img.pixels.chunks_exact(3).any(|p| p == style.path_color || p == style.start_color));
}

#[test]
fn straight_run_draws_horizontal_line_of_expected_length() {
    let map = long_loop();
    let style = OverlayStyle { start_radius: 0, ..OverlayStyle::default() };
    let trace: Vec<Pose> = (0..=300).map(|i| Pose { x: 1.5 + 0.01 * i as f64, y: 0.25, heading: 0.0 }).collect();
    let img = rasterize_overlay(&trace, &map, &style);
    let row = img.height - 1 - (0.25 * style.scale as f64) as usize;
    let mut drawn = 0;
    for v in 0..img.height {
        for u in 0..img.width {
            let p = img.pixel(u, v);
            if p == style.path_color || p == style.start_color {
                assert_eq!(v, row);
                drawn += 1;
            }
        }
    }
    // 3 units at 64 px per unit, both endpoints included
    assert_eq!(drawn, 3 * style.scale + 1);
    assert_eq!(img.pixel(0, 0), Material::Grass.base_color());
}

#[test]
fn polyline_pixels_track_arc_length() {
    let map = Arc::new(maps::small_loop());
    let trace = oracle_lap(&map);
    let style = OverlayStyle { start_radius: 0, ..OverlayStyle::default() };
    let img = rasterize_overlay(&trace, &map, &style);
    let drawn = img.pixels.chunks_exact(3).filter(|p| *p == style.path_color || *p == style.start_color).count() as f64;
    let length: f64 = trace.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
    let ideal = length * style.scale as f64;
    // 8-connected lines use between L/sqrt(2) and L pixels
    assert!(drawn <= ideal * 1.05 && drawn >= ideal / 2f64.sqrt() * 0.95, "{drawn} vs {ideal}");
}
