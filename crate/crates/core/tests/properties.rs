use std::collections::HashMap;
use std::f64::consts::PI;

use echotrace::acoustics::{
    atmospheric_loss, diffraction_magnitudes, filter_diffraction_candidates, geometric_loss, passive_magnitudes,
    simulate, specular_intensity, specular_magnitudes, Components, ContributionKind, DiffractionCandidate,
};
use echotrace::mesh::{TriangleMesh, Vec3};
use echotrace::pointcloud::{read_point_cloud, to_bytes};
use echotrace::preproc::{map_brdf, triangle_curvature_metric, vertex_mean_curvature, CurvatureTable};
use echotrace::scene::{Emitter, MaterialSpec, Pose, Scene, SceneBuilder};
use echotrace::shapes;
use echotrace::synthesis::{
    impulse_response, inverse_real, linear_chirp, matched_filter, pair_impulse_response, peak_index, render_signal,
    transfer_function, SpectralGrid,
};
use echotrace::tracer::trace_specular;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rigid() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-5.0f64..5.0),
        prop::array::uniform4(-1.0f64..1.0),
    )
        .prop_filter("non-degenerate rotation", |(_, q)| q.iter().map(|x| x * x).sum::<f64>() > 0.05)
        .prop_map(|(p, q)| Pose::new(Vec3::from(p), q).unwrap())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-9
}

fn material() -> MaterialSpec {
    MaterialSpec::uniform("m", 1, (0.1, 0.5), (0.9, 0.5), 0.1, 5.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn curvature_is_rigid_invariant(pose in rigid()) {
        for mesh in [shapes::icosphere(0.7, 2), shapes::tessellated_cuboid(Vec3::new(1.0, 0.6, 0.4), 4)] {
            let moved = mesh.transformed(|v| pose.transform_point(v));
            let g0 = vertex_mean_curvature(&mesh).values;
            let g1 = vertex_mean_curvature(&moved).values;
            for (a, b) in g0.iter().zip(&g1) {
                prop_assert!(close(*a, *b, 1e-6), "{a} vs {b}");
            }
            let c0 = triangle_curvature_metric(&mesh, &g0, &material()).metric;
            let c1 = triangle_curvature_metric(&moved, &g1, &material()).metric;
            for (a, b) in c0.iter().zip(&c1) {
                prop_assert!(close(*a, *b, 1e-6), "{a} vs {b}");
            }
            prop_assert!(close(mesh.total_area(), moved.total_area(), 1e-9));
        }
    }

    #[test]
    fn pose_round_trip(pose in rigid(), p in prop::array::uniform3(-10.0f64..10.0)) {
        let p = Vec3::from(p);
        prop_assert!((pose.inverse_transform_point(&pose.transform_point(&p)) - p).norm() < 1e-9);
    }

    #[test]
    fn brdf_is_monotone(c1 in 0.0f64..3.0, dc in 0.0f64..3.0, bs in 0.01f64..1.0, be in 0.01f64..3.0, ks in 0.0f64..1.0, ke in 0.0f64..1.0) {
        let m = MaterialSpec::uniform("m", 1, (bs, be), (ks, ke), 0.1, 2.0);
        let (b1, k1) = map_brdf(c1, &m, 0);
        let (b2, k2) = map_brdf(c1 + dc, &m, 0);
        prop_assert!((b2 - b1) * (be - bs) >= -1e-15);
        prop_assert!((k2 - k1) * (ke - ks) >= -1e-15);
        prop_assert!(b1 >= bs.min(be) - 1e-15 && b1 <= bs.max(be) + 1e-15);
        prop_assert!(k1 >= ks.min(ke) - 1e-15 && k1 <= ks.max(ke) + 1e-15);
    }

    #[test]
    fn crease_dominates_top_decile(slope in 0.5f64..3.0, rows in 6usize..20) {
        let (mesh, crease) = folded_plate(slope, rows);
        let g = vertex_mean_curvature(&mesh).values;
        let mut m = material();
        m.area_ref = Some(mesh.areas().iter().copied().fold(f64::INFINITY, f64::min));
        let c = triangle_curvature_metric(&mesh, &g, &m).metric;
        let mut sorted = c.clone();
        sorted.sort_by(f64::total_cmp);
        let p90 = sorted[(0.9 * (sorted.len() - 1) as f64) as usize];
        let mut top = 0;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if c[t] > p90 {
                top += 1;
                prop_assert!(tri.iter().any(|&v| crease[v as usize]), "triangle {t} with C = {} is off the crease", c[t]);
            }
        }
        prop_assert!(top > 0);
    }

    #[test]
    fn magnitude_never_grows_with_distance(r in 0.01f64..100.0, alpha in 0.0f64..5.0, gamma in 0.0f64..PI, beta in 0.01f64..PI, k in 0.0f64..1.0) {
        let at = |r: f64| geometric_loss(r).unwrap() * atmospheric_loss(r, alpha) * specular_intensity(gamma, beta, k);
        prop_assert!(at(2.0 * r) <= at(r));
        prop_assert!(at(r) <= k / (r * r) * (1.0 + 1e-15));
    }
}

/// A plate folded upward along `x = 0` with slope `slope`, graded toward
/// the fold. Returns the mesh and which vertices lie on the fold.
fn folded_plate(slope: f64, rows: usize) -> (TriangleMesh, Vec<bool>) {
    let mut xs = vec![0.0];
    for i in 0..7 {
        let x = 0.01 * 2f64.powi(i);
        xs.push(x);
        xs.push(-x);
    }
    xs.sort_by(f64::total_cmp);
    let width = 2.0 * xs[xs.len() - 1];
    let mut v = Vec::new();
    for j in 0..=rows {
        for &x in &xs {
            v.push(Vec3::new(x, width * j as f64 / rows as f64, slope * x.max(0.0)));
        }
    }
    let nx = xs.len() as u32;
    let mut t = Vec::new();
    for j in 0..rows as u32 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            t.push([a, a + 1, a + nx + 1]);
            t.push([a, a + nx + 1, a + nx]);
        }
    }
    let crease = v.iter().map(|p| p.x == 0.0).collect();
    (TriangleMesh::new(v, t).unwrap(), crease)
}

#[test]
fn curvature_scales_inversely_with_size() {
    let base = shapes::icosphere(1.0, 3);
    let g1 = vertex_mean_curvature(&base).values;
    for lambda in [0.5, 1.0, 2.0] {
        let scaled = base.transformed(|v| v * lambda);
        let g = vertex_mean_curvature(&scaled).values;
        for (a, b) in g.iter().zip(&g1) {
            assert!((a * lambda - b).abs() <= 0.02 * b, "lambda {lambda}: {a} vs {b}");
        }
    }
}

fn rich_scene(frame: &Pose) -> Scene {
    let place = |p: Pose| frame.compose(&p);
    let m = MaterialSpec::uniform("m", 3, (0.15, 0.6), (0.9, 0.4), 0.3, 4.0);
    SceneBuilder::new(vec![30e3, 40e3, 50e3])
        .attenuation(vec![0.2, 0.4, 0.8])
        .material(m)
        .instance("ball", shapes::icosphere(0.4, 2), place(Pose::at(Vec3::new(0.3, 0.2, 2.0))), "m")
        .instance(
            "box",
            shapes::tessellated_cuboid(Vec3::new(0.8, 0.5, 0.3), 3),
            place(Pose::new(Vec3::new(-0.7, -0.4, 1.6), [0.9, 0.2, 0.1, 0.3]).unwrap()),
            "m",
        )
        .instance(
            "wall",
            shapes::plate(4.0, 4.0, 4, 4),
            place(Pose::new(Vec3::new(0.1, 0.0, 3.5), [0.05, 0.99, 0.02, 0.0]).unwrap()),
            "m",
        )
        .emitter(Emitter::new("tx", place(Pose::new(Vec3::zeros(), [0.99, 0.05, -0.08, 0.01]).unwrap()), 600, 2, 15.0, 3))
        .receiver("a", place(Pose::at(Vec3::new(0.07, 0.01, 0.0))))
        .receiver("b", place(Pose::at(Vec3::new(-0.06, 0.03, 0.02))))
        .receiver("c", place(Pose::at(Vec3::new(0.5, -0.5, 0.3))))
        .build()
        .unwrap()
}

#[test]
fn magnitudes_are_rigid_invariant() {
    let base = rich_scene(&Pose::default());
    let table = CurvatureTable::compute(&base);
    let reference = simulate(&base, &table, Components::ALL, 5).unwrap();
    let index: HashMap<_, _> = reference
        .contributions
        .iter()
        .map(|c| ((c.kind, c.source, c.receiver, c.index), c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..4 {
        let frame = Pose::new(
            Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            [rng.random(), rng.random(), rng.random(), rng.random::<f64>() + 0.2],
        )
        .unwrap();
        let moved = rich_scene(&frame);
        let t = CurvatureTable::compute(&moved);
        let set = simulate(&moved, &t, Components::SPECULAR, 5).unwrap();
        let spec = reference.contributions.iter().filter(|c| c.kind == ContributionKind::Specular).count();
        assert_eq!(set.contributions.len(), spec);
        for c in &set.contributions {
            let r = index[&(c.kind, c.source, c.receiver, c.index)];
            assert!(close(c.path_length, r.path_length, 1e-9), "{} {} {} {}", c.index, c.receiver, c.path_length, r.path_length);
            for (a, b) in c.magnitudes.iter().zip(&r.magnitudes) {
                assert!(((a - b) as f64).abs() <= 1e-9 * (*a as f64).abs().max(*b as f64), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn magnitudes_are_bounded_by_spreading() {
    let scene = rich_scene(&Pose::default());
    let table = CurvatureTable::compute(&scene);
    let set = simulate(&scene, &table, Components::ALL, 1).unwrap();
    let k_max = (0..scene.triangle_count() as u32).flat_map(|t| table.ks(t).to_vec()).fold(0.0, f64::max);
    let id_max = scene.materials().iter().flat_map(|m| m.diffraction.clone()).fold(0.0, f64::max);
    let ip_max = scene.emitters().iter().flat_map(|e| e.source_level.clone()).fold(0.0, f64::max);
    let i_max = k_max.max(id_max).max(ip_max);
    assert!(set.contributions.len() > 100);
    for c in &set.contributions {
        assert!(c.path_length > 0.0);
        for m in &c.magnitudes {
            assert!(m.is_finite() && *m >= 0.0);
            assert!((*m as f64) <= i_max / (c.path_length * c.path_length) * (1.0 + 1e-6));
        }
    }
}

#[test]
fn monostatic_axial_echo_magnitude() {
    let d = 1.5;
    let m = MaterialSpec::uniform("m", 2, (0.2, 0.2), (0.8, 0.8), 0.0, 1.0);
    let scene = SceneBuilder::new(vec![30e3, 40e3])
        .attenuation(vec![0.5, 1.0])
        .material(m)
        .instance("plate", shapes::plate(3.0, 3.0, 3, 3), Pose::looking_along(Vec3::new(0.0, 0.0, d), -Vec3::z()), "m")
        .emitter(Emitter::new("tx", Pose::default(), 1, 0, 10.0, 2))
        .receiver("rx", Pose::default())
        .build()
        .unwrap();
    let table = CurvatureTable::compute(&scene);
    let hits = trace_specular(&scene, 0);
    let c = specular_magnitudes(&scene, &hits, &table).unwrap();
    assert_eq!(c.len(), 1);
    assert!((c[0].path_length - 2.0 * d).abs() < 1e-12);
    for (b, alpha) in [0.5, 1.0].iter().enumerate() {
        let want = (0.8 * atmospheric_loss(2.0 * d, *alpha) / (2.0 * d).powi(2)) as f32;
        assert_eq!(c[0].magnitudes[b], want);
    }
}

#[test]
fn hidden_receivers_get_no_specular() {
    let m = MaterialSpec::uniform("m", 1, (0.2, 0.2), (0.8, 0.8), 0.0, 1.0);
    let scene = SceneBuilder::new(vec![40e3])
        .material(m)
        .instance("plate", shapes::plate(3.0, 3.0, 3, 3), Pose::looking_along(Vec3::new(0.0, 0.0, 2.0), -Vec3::z()), "m")
        .instance("shield", shapes::plate(0.5, 0.5, 1, 1), Pose::at(Vec3::new(1.0, 0.0, 0.3)), "m")
        .emitter(Emitter::new("tx", Pose::default(), 400, 0, 10.0, 1))
        .receiver("open", Pose::at(Vec3::new(-1.0, 0.0, 0.0)))
        .receiver("hidden", Pose::at(Vec3::new(1.0, 0.0, 0.0)))
        .build()
        .unwrap();
    let table = CurvatureTable::compute(&scene);
    let hits = trace_specular(&scene, 0);
    let c = specular_magnitudes(&scene, &hits, &table).unwrap();
    let open: Vec<_> = c.iter().filter(|c| c.receiver == 0).collect();
    let hidden: Vec<_> = c.iter().filter(|c| c.receiver == 1).collect();
    assert!(!open.is_empty());
    let mut reaching = 0;
    for h in hidden.iter().filter(|h| h.position.z > 1.0) {
        let p = h.position;
        // a visible echo from the far plate must pass beside the shield
        let t = (p.z - 0.3) / p.z;
        let crossing = p + (Vec3::new(1.0, 0.0, 0.0) - p) * t;
        assert!((crossing.x - 1.0).abs() > 0.25 - 1e-6 || crossing.y.abs() > 0.25 - 1e-6, "{p:?}");
        reaching += 1;
    }
    let unshielded = open.iter().filter(|h| h.position.z > 1.0).count();
    assert!(reaching < unshielded);
}

#[test]
fn diffraction_doubling_legs_quarters_magnitude() {
    let m = MaterialSpec::uniform("m", 2, (0.2, 0.2), (0.8, 0.8), 1.0, 1.0);
    let build = |scale: f64| {
        SceneBuilder::new(vec![30e3, 40e3])
            .material(m.clone())
            .instance("dot", shapes::plate(0.01, 0.01, 1, 1), Pose::looking_along(Vec3::new(0.0, 0.0, scale), -Vec3::z()), "m")
            .emitter(Emitter::new("tx", Pose::default(), 1, 0, 100.0, 2))
            .receiver("rx", Pose::at(Vec3::new(0.0, 0.0, 0.0)))
            .build()
            .unwrap()
    };
    let mut out = Vec::new();
    for scale in [1.0, 2.0] {
        let s = build(scale);
        let cand = DiffractionCandidate {
            triangle: 0,
            instance: 0,
            barycentric: [1.0, 0.0, 0.0],
            position: Vec3::new(0.0, 0.0, scale),
        };
        let kept = filter_diffraction_candidates(&s, &[cand], 0, PI / 2.0);
        out.push(diffraction_magnitudes(&s, 0, &kept)[0].clone());
    }
    assert_eq!(out[0].path_length, 2.0);
    assert_eq!(out[1].path_length, 4.0);
    for b in 0..2 {
        assert_eq!(out[0].magnitudes[b] / out[1].magnitudes[b], 4.0);
    }
}

#[test]
fn passive_ranking_follows_inverse_square() {
    let mut b = SceneBuilder::new(vec![30e3, 40e3])
        .attenuation(vec![0.0, 0.0])
        .emitter(Emitter::new("bat", Pose::at(Vec3::new(0.13, -0.07, 1.0)), 1, 0, 10.0, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..64 {
        let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
        b = b.receiver(&format!("mic{i}"), Pose::at(p));
    }
    let scene = b.build().unwrap();
    let p = passive_magnitudes(&scene);
    assert_eq!(p.len(), 64);
    let mut by_mag: Vec<_> = p.iter().map(|c| (c.magnitudes[0], c.receiver)).collect();
    by_mag.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let src = scene.emitters()[0].pose.position;
    let mut by_dist: Vec<_> = scene
        .receivers()
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.pose.position - src).norm(), i as u32))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let a: Vec<u32> = by_mag.iter().map(|x| x.1).collect();
    let d: Vec<u32> = by_dist.iter().map(|x| x.1).collect();
    assert_eq!(a, d);

    let blocked = SceneBuilder::new(vec![30e3])
        .material(MaterialSpec::uniform("m", 1, (0.2, 0.2), (0.8, 0.8), 0.0, 1.0))
        .instance("wall", shapes::plate(2.0, 2.0, 1, 1), Pose::at(Vec3::new(0.0, 0.0, 0.5)), "m")
        .emitter(Emitter::new("tx", Pose::default(), 1, 0, 10.0, 1))
        .receiver("rx", Pose::at(Vec3::new(0.0, 0.0, 1.0)))
        .build()
        .unwrap();
    assert!(passive_magnitudes(&blocked).is_empty());
}

#[test]
fn point_cloud_round_trips_simulation() {
    let scene = rich_scene(&Pose::default());
    let table = CurvatureTable::compute(&scene);
    let set = simulate(&scene, &table, Components::ALL, 77).unwrap();
    let bytes = to_bytes(&set);
    assert_eq!(read_point_cloud(&bytes[..]).unwrap(), set);
    assert_eq!(to_bytes(&read_point_cloud(&bytes[..]).unwrap()), bytes);
}

#[test]
fn frequency_sum_equals_time_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let freqs = [25e3, 30e3, 35e3, 40e3, 45e3];
    let grid = SpectralGrid::new(2e5, 8192).unwrap();
    let contribs: Vec<_> = (0..50)
        .map(|i| echotrace::acoustics::Contribution {
            kind: ContributionKind::Specular,
            source: 0,
            receiver: 0,
            position: Vec3::zeros(),
            path_length: rng.random_range(0.1..10.0),
            index: i,
            magnitudes: (0..5).map(|_| rng.random_range(0.0..1.0f32)).collect(),
        })
        .collect();
    let spectra: Vec<_> = contribs.iter().map(|c| transfer_function(c, &freqs, &grid, 343.0).unwrap()).collect();
    let summed = impulse_response(0, 0, &spectra, grid).unwrap().samples;
    let mut by_time = vec![0.0; grid.fft_len];
    for s in &spectra {
        for (acc, x) in by_time.iter_mut().zip(inverse_real(s)) {
            *acc += x;
        }
    }
    let peak = summed.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (a, b) in summed.iter().zip(&by_time) {
        assert!((a - b).abs() <= 1e-12 * peak);
    }
    // superposition across disjoint subsets
    let a = impulse_response(0, 0, &spectra[..20], grid).unwrap().samples;
    let b = impulse_response(0, 0, &spectra[20..], grid).unwrap().samples;
    for i in 0..grid.fft_len {
        assert!((summed[i] - (a[i] + b[i])).abs() <= 1e-12 * peak);
    }
}

#[test]
fn fractional_delays_land_within_one_sample() {
    let fs = 2e5;
    let grid = SpectralGrid::new(fs, 8192).unwrap();
    let freqs = [25e3, 37.5e3, 50e3];
    let pulse = linear_chirp(25e3, 50e3, 1e-3, fs);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let r: f64 = rng.random_range(0.5..12.0);
        let c = echotrace::acoustics::Contribution {
            kind: ContributionKind::Diffraction,
            source: 0,
            receiver: 0,
            position: Vec3::zeros(),
            path_length: r,
            index: 0,
            magnitudes: vec![0.4, 1.0, 0.7],
        };
        let h = impulse_response(0, 0, &[transfer_function(&c, &freqs, &grid, 343.0).unwrap()], grid).unwrap();
        let out = render_signal(&h, &pulse).unwrap();
        let peak = peak_index(&matched_filter(&out.samples, &pulse.samples)) as f64;
        assert!((peak - fs * r / 343.0).abs() <= 1.0, "r = {r}: peak {peak}");
    }
}

#[test]
fn amplitude_scales_linearly() {
    let grid = SpectralGrid::new(2e5, 4096).unwrap();
    let freqs = [25e3, 50e3];
    let peak_for = |m: f32| {
        let c = echotrace::acoustics::Contribution {
            kind: ContributionKind::Passive,
            source: 0,
            receiver: 0,
            position: Vec3::zeros(),
            path_length: 2.345,
            index: 0,
            magnitudes: vec![m, m],
        };
        let h = inverse_real(&transfer_function(&c, &freqs, &grid, 343.0).unwrap());
        h.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    };
    let unit = peak_for(1.0);
    for m in [0.1f32, 0.5] {
        assert!((peak_for(m) / unit - m as f64).abs() < 1e-12);
    }
}

#[test]
fn pair_response_includes_every_component() {
    let scene = rich_scene(&Pose::default());
    let table = CurvatureTable::compute(&scene);
    let grid = SpectralGrid::new(2e5, 1 << 14).unwrap();
    let all = simulate(&scene, &table, Components::ALL, 3).unwrap();
    let parts = [Components::SPECULAR, Components::DIFFRACTION, Components::PASSIVE]
        .map(|k| simulate(&scene, &table, k, 3).unwrap());
    let total = pair_impulse_response(&all, 0, 2, grid).unwrap().samples;
    let peak = total.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let sum: Vec<f64> = parts
        .iter()
        .map(|s| pair_impulse_response(s, 0, 2, grid).unwrap().samples)
        .fold(vec![0.0; grid.fft_len], |acc, h| acc.iter().zip(&h).map(|(a, b)| a + b).collect());
    for (a, b) in total.iter().zip(&sum) {
        assert!((a - b).abs() <= 1e-12 * peak);
    }
}
