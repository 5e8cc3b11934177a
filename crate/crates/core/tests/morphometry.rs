use jmap_core::data::{generate_phantom, PhantomSpec, RadialShrink, Template, ATROPHY_REGION};
use jmap_core::morphometry::{jacobian_map, jacobian_matrix, to_model_input, InputMode, JacobianClass};
use jmap_core::registration::{compose, DisplacementField};
use jmap_core::Geometry;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

const DIMS: [usize; 3] = [32, 32, 32];

fn interior(p: [usize; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] > 0 && p[a] + 1 < dims[a])
}

fn linear_field(m: Matrix3<f64>, c: [f64; 3]) -> DisplacementField {
    DisplacementField::from_fn(Geometry::unit(DIMS), |x, y, z| {
        let d = m * Vector3::new(x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]);
        [d[0], d[1], d[2]]
    })
    .unwrap()
}

#[test]
fn identity_field_has_unit_determinant_everywhere() {
    let jm = jacobian_map(&DisplacementField::zeros(Geometry::unit(DIMS)));
    assert!(jm.det.data().iter().all(|&d| d == 1.0));
    assert_eq!(jm.class_histogram(), [0, DIMS.iter().product(), 0]);
}

#[test]
fn uniform_scale_gives_cubed_factor() {
    let s = 1.1;
    let f = linear_field(Matrix3::identity() * (s - 1.0), [15.5; 3]);
    let jm = jacobian_map(&f);
    let g = f.geometry();
    for i in 0..g.len() {
        let p = g.coords(i);
        if interior(p, DIMS) {
            assert!((jm.det.data()[i] - 1.331).abs() <= 1e-9);
            assert_eq!(jm.class[i], JacobianClass::Expansion);
        }
    }
}

#[test]
fn translation_has_unit_determinant() {
    let f = DisplacementField::from_fn(Geometry::unit(DIMS), |_, _, _| [2.5, -1.25, 0.75]).unwrap();
    let jm = jacobian_map(&f);
    assert!(jm.det.data().iter().all(|&d| (d - 1.0).abs() <= 1e-12));
}

#[test]
fn rotation_matrix_entries_match_r_minus_identity() {
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8)), 0.05).into_inner();
    let f = linear_field(r - Matrix3::identity(), [15.5; 3]);
    let expected = r - Matrix3::identity();
    for p in [[1, 1, 1], [5, 17, 9], [16, 16, 16], [30, 2, 29]] {
        let j = jacobian_matrix(&f, p);
        assert!((j - expected).abs().max() <= 1e-10, "{p:?}: {j}");
    }
}

#[test]
fn flipping_the_field_flips_the_map() {
    let g = Geometry::unit([12, 10, 9]);
    let f = DisplacementField::from_fn(g.clone(), |x, y, z| {
        let (x, y, z) = (x as f64, y as f64, z as f64);
        [
            0.3 * (0.4 * x + 0.1 * y).sin(),
            0.2 * (0.3 * z).cos() * x * 0.1,
            0.1 * y * z * 0.02,
        ]
    })
    .unwrap();
    let w = 12;
    let flipped = DisplacementField::from_fn(g.clone(), |x, y, z| {
        let v = f.at(w - 1 - x, y, z);
        [-v[0], v[1], v[2]]
    })
    .unwrap();
    let a = jacobian_map(&f);
    let b = jacobian_map(&flipped);
    for i in 0..g.len() {
        let [x, y, z] = g.coords(i);
        if interior([x, y, z], g.dims()) {
            let mirrored = a.det.get(w - 1 - x, y, z);
            assert!((b.det.data()[i] - mirrored).abs() <= 1e-14, "{x},{y},{z}");
        }
    }
}

fn smooth_field(amplitude: f64, phase: f64) -> DisplacementField {
    DisplacementField::from_fn(Geometry::unit([16, 16, 16]), |x, y, z| {
        let (x, y, z) = (x as f64, y as f64, z as f64);
        [
            amplitude * (0.3 * y + phase).sin(),
            amplitude * (0.25 * z + 0.2 * x + phase).cos(),
            amplitude * (0.35 * x - phase).sin(),
        ]
    })
    .unwrap()
}

#[test]
fn composition_multiplies_determinants_to_first_order() {
    // 1e-2 voxel magnitudes
    let a = smooth_field(0.01, 0.0);
    let b = smooth_field(0.01, 1.3);
    let ab = jacobian_map(&compose(&a, &b));
    let (ja, jb) = (jacobian_map(&a), jacobian_map(&b));
    for i in 0..ab.det.len() {
        let product = ja.det.data()[i] * jb.det.data()[i];
        assert!((ab.det.data()[i] - product).abs() <= 5e-3);
    }
}

#[test]
fn field_and_negation_multiply_to_one() {
    let f = smooth_field(0.1 / 3f64.sqrt(), 0.4);
    assert!(f.max_norm() <= 0.1 + 1e-12);
    let (a, b) = (jacobian_map(&f), jacobian_map(&f.negated()));
    let g = f.geometry();
    for i in 0..g.len() {
        if interior(g.coords(i), g.dims()) {
            assert!((a.det.data()[i] * b.det.data()[i] - 1.0).abs() <= 1e-2);
        }
    }
}

#[test]
fn logdet_of_reciprocal_changes_is_symmetric() {
    let g = Geometry::unit([8, 4, 4]);
    // left half compressed by 2, right half expanded by 2 (det 0.5 and 2.0)
    let f = DisplacementField::from_fn(g, |x, _, _| {
        let x = x as f64;
        [if x <= 3.0 { -0.5 * x } else { x - 4.5 }, 0.0, 0.0]
    })
    .unwrap();
    let jm = jacobian_map(&f);
    let ln2 = std::f64::consts::LN_2;
    for y in 0..4 {
        for z in 0..4 {
            for x in [0, 1, 2] {
                assert!((jm.logdet.get(x, y, z) + ln2).abs() < 1e-12);
            }
            for x in [5, 6, 7] {
                assert!((jm.logdet.get(x, y, z) - ln2).abs() < 1e-12);
            }
        }
    }
    let unit = jacobian_map(&DisplacementField::zeros(Geometry::unit([4, 4, 4])));
    assert!(unit.logdet.data().iter().all(|&l| l == 0.0));
}

#[test]
fn model_input_is_standardized_over_the_mask() {
    let t = Template::mini(DIMS);
    let mask = t.brain_mask();
    let f = smooth_field(0.4, 0.2);
    let f = DisplacementField::from_fn(Geometry::unit(DIMS), |x, y, z| f.at(x / 2, y / 2, z / 2)).unwrap();
    let jm = jacobian_map(&f);
    for mode in [InputMode::Det, InputMode::LogDet] {
        let v = to_model_input(&jm, mode, Some(&mask));
        let inside: Vec<f64> = v
            .data()
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .collect();
        let n = inside.len() as f64;
        let mean = inside.iter().sum::<f64>() / n;
        let var = inside.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(
            mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-9,
            "{mode:?}: {mean} {var}"
        );
        assert!(v.data().iter().zip(&mask).all(|(&x, &m)| m || x == 0.0));
    }
}

/// Volume of the atrophied region in subject space, counted on a lattice of
/// `n³` points per voxel mapped back through the shrink.
fn warped_region_volume(t: &Template, shrink: &RadialShrink, n: usize) -> f64 {
    let dims = t.atlas.dims();
    let step = 1.0 / n as f64;
    let mut count = 0usize;
    for z in 0..dims[2] * n {
        for y in 0..dims[1] * n {
            for x in 0..dims[0] * n {
                let y_sub = [x, y, z].map(|i| -0.5 + (i as f64 + 0.5) * step);
                let p = shrink.inverse(y_sub);
                let v = p.map(|c| c.round());
                if v.iter().zip(dims).all(|(&c, d)| c >= 0.0 && c < d as f64)
                    && t.atlas.get(v[0] as usize, v[1] as usize, v[2] as usize) == ATROPHY_REGION
                {
                    count += 1;
                }
            }
        }
    }
    count as f64 * step.powi(3)
}

#[test]
fn determinant_integral_matches_counted_warped_volume() {
    let t = Template::mini(DIMS);
    let spec = PhantomSpec {
        atrophy_factor: 0.7,
        ..Default::default()
    };
    let phantom = generate_phantom(&spec, &t).unwrap();
    let jm = jacobian_map(&phantom.field);
    let region: Vec<bool> = t.atlas.labels().iter().map(|&l| l == ATROPHY_REGION).collect();
    let shrink = RadialShrink::around_region(&t.atlas, ATROPHY_REGION, 0.7).unwrap();
    let measured = warped_region_volume(&t, &shrink, 4);
    let integral = jm.integral(&region);
    let mean_det = integral / region.iter().filter(|&&m| m).count() as f64;
    assert!(mean_det < 1.0);
    assert!(
        (integral - measured).abs() <= 0.02 * measured,
        "{integral} vs {measured}"
    );
}
