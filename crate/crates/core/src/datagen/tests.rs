use proptest::prelude::*;

use super::*;

#[test]
fn theoretical_max_cases() {
    let tm = |a, b, c, d| theoretical_max(Range::new(a, b), Range::new(c, d)).unwrap();
    assert!((tm(3.0, 5.0, 4.0, 6.0) - 0.75).abs() < 1e-12);
    assert!((tm(1.0, 4.0, 3.0, 6.0) - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
    assert!((tm(0.0, 1.0, 2.0, 3.0) - 1.0).abs() < 1e-12);
    assert!((tm(2.0, 4.0, 2.0, 4.0) - 0.5).abs() < 1e-12);
    assert!(theoretical_max(Range::new(1.0, 1.0), Range::new(1.0, 1.0)).is_err());
    assert!(theoretical_max(Range::new(0.0, 1.0), Range::new(0.0, 2.0)).is_err());
}

#[test]
fn both_shift_maxima_decrease() {
    let specs = stage_specs(Schedule::BothShift, 5, 2).unwrap();
    let got: Vec<f64> = specs.iter().map(|s| s.theoretical_max().unwrap()).collect();
    let want = [0.75, 0.6875, 0.625, 0.5625, 0.5];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
    let last = &specs[4];
    assert_eq!(last.sigma_b[0], Range::new(2.5, 4.5));
    assert_eq!(last.sigma_b[1], Range::new(4.5, 6.5));
}

#[test]
fn conf_shifts_keeps_main_fixed() {
    let specs = stage_specs(Schedule::ConfShifts, 5, 2).unwrap();
    assert!(specs.iter().all(|s| s.theoretical_max().unwrap() == 0.75));
    assert_eq!(specs[2].sigma_b[0], Range::new(2.75, 4.75));
}

#[test]
fn static_rejects_odd_n() {
    assert!(gen_static(7, 0).is_err());
    assert!(gen_continual(Schedule::BothShift, 1, 4, 0).is_err());
    assert!(gen_continual(Schedule::Static, 3, 4, 0).is_err());
}

#[test]
fn static_dataset_shape_and_ranges() {
    let d = gen_static(40, 3).unwrap();
    assert_eq!(d.len(), 40);
    assert_eq!(d.images.len(), 40 * 32 * 32);
    for i in 0..d.len() {
        assert_eq!(d.labels[i] as usize, i % 2);
        let r = if d.labels[i] == 0 {
            Range::new(1.0, 4.0)
        } else {
            Range::new(3.0, 6.0)
        };
        assert!(r.contains(d.sigma_a[i]) && r.contains(d.confounders[(i, 0)]));
    }
    assert_eq!(d.split_indices(0, true).len(), 32);
    assert_eq!(d.split_indices(0, false).len(), 8);
    let train_g1 = d
        .split_indices(0, true)
        .iter()
        .filter(|&&i| d.labels[i] == 0)
        .count();
    assert_eq!(train_g1, 16);
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = gen_continual(Schedule::BothShift, 3, 6, 11).unwrap();
    let b = gen_continual(Schedule::BothShift, 3, 6, 11).unwrap();
    let c = gen_continual(Schedule::BothShift, 3, 6, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.images, c.images);
}

#[test]
fn delta_one_rerender_is_exact() {
    let d = gen_continual(Schedule::ConfShifts, 2, 4, 5).unwrap();
    for i in 0..d.len() {
        assert_eq!(d.render_at_delta(i, 1.0).unwrap(), d.image(i));
    }
    let zero = d.render_at_delta(0, 0.0).unwrap();
    assert!(zero[24 * 32 + 8] < 0.1);
}

#[test]
fn positional_confounder_walks_antidiagonal() {
    let specs = stage_specs(Schedule::Positional, 4, 2).unwrap();
    let centers: Vec<_> = specs.iter().map(|s| s.conf_center).collect();
    assert_eq!(centers, vec![(28.0, 4.0), (20.0, 12.0), (12.0, 20.0), (4.0, 28.0)]);
    let d = gen_positional(4, 4, 1).unwrap();
    assert_eq!(d.layout, Layout::grid());
    let i = d.split_indices(3, true)[0];
    let img = d.image(i);
    assert_eq!(d.confounders.cols(), 4);
    let row = d.confounders.row(i);
    assert_eq!(&row[..3], &[0.0; 3]);
    assert!((img[4 * 32 + 28] - row[3]).abs() < 0.1);
    for j in 0..d.len() {
        let s = d.stage_ids[j];
        let row = d.confounders.row(j);
        assert!((0..4).all(|c| (c == s) == (row[c] != 0.0)));
        assert_eq!(d.conf_intensity(j), row[s]);
    }
}

#[test]
fn container_round_trip() {
    let d = gen_continual(Schedule::MainShifts, 2, 4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.rmdn");
    d.save(&p).unwrap();
    assert_eq!(SynthDataset::load(&p).unwrap(), d);
}

#[test]
fn csv_layout() {
    let d = gen_static(4, 0).unwrap();
    let csv = d.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,stage,label,confounder_0");
    assert_eq!(lines.len(), 5);
    let v: f64 = lines[2].split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(v, d.confounders[(1, 0)]);
}

proptest! {
    #[test]
    fn split_is_stratified(n in 1usize..30, seed in 0u64..1000) {
        let d = gen_continual(Schedule::ConfShifts, 2, 2 * n, seed).unwrap();
        for s in 0..2 {
            for g in 0..2u8 {
                let train = d.split_indices(s, true).iter().filter(|&&i| d.labels[i] == g).count();
                prop_assert_eq!(train, (n as f64 * TRAIN_FRACTION).round() as usize);
            }
        }
    }

    #[test]
    fn theoretical_max_in_half_one(lo in -5.0f64..5.0, w in 0.1f64..4.0, off in -6.0f64..6.0) {
        let t = theoretical_max(Range::new(lo, lo + w), Range::new(lo + off, lo + off + w)).unwrap();
        prop_assert!((0.5..=1.0).contains(&t));
        let t2 = theoretical_max(Range::new(lo + off, lo + off + w), Range::new(lo, lo + w)).unwrap();
        prop_assert!((t - t2).abs() < 1e-12);
    }
}
