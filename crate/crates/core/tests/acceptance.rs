//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use echotrace::acoustics::{
    angle_between, atmospheric_loss, diffraction_magnitudes, filter_diffraction_candidates, geometric_loss, in_frustum,
    passive_magnitudes, sample_diffraction_candidates, simulate, specular_intensity, specular_magnitudes, Components,
    Contribution, ContributionKind, ContributionSet, DiffractionCandidate,
};
use echotrace::bvh::{intersect_triangle, nearest_brute_force};
use echotrace::directivity::{departure_angles, GainTable};
use echotrace::mesh::{TriangleMesh, Vec3};
use echotrace::preproc::{estimate_footprint, map_brdf, vertex_mean_curvature, write_cache, CurvatureTable};
use echotrace::scene::{Emitter, MaterialSpec, Pose, Scene, SceneBuilder};
use echotrace::shapes;
use echotrace::synthesis::{
    difference_db, linear_chirp, matched_filter, pair_impulse_response, peak_index, render_signal, rms_spread,
    spectrogram, SpectralGrid,
};
use echotrace::tracer::{facing, launch_directions, reflect, HitRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bins(start: f64, stop: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect()
}

fn footprint() -> Outcome {
    let big = estimate_footprint(1 << 26, 20).map_err(|e| e.to_string())?;
    ensure(big >> 20 == 16384, || format!("2^26 triangles, 20 bins: {} MiB", big >> 20))?;
    let scene = SceneBuilder::new(bins(20e3, 85e3, 14))
        .material(MaterialSpec::uniform("m", 14, (0.1, 0.5), (0.9, 0.5), 0.1, 1.0))
        .instance("plate", shapes::plate(1.0, 1.0, 50, 100), Pose::default(), "m")
        .build()
        .map_err(|e| e.to_string())?;
    let table = CurvatureTable::compute(&scene);
    let records = table.cache_records(&scene, 0);
    ensure(records.len() == 10_000, || format!("{} records", records.len()))?;
    let mut bytes = Vec::new();
    write_cache(&mut bytes, 14, &records).map_err(|e| e.to_string())?;
    let formula = 128 + 8 * 10_000 * 26;
    let ratio = bytes.len() as f64 / formula as f64;
    ensure((0.5..=2.0).contains(&ratio), || format!("cache {} bytes vs {formula}", bytes.len()))?;
    Ok(format!("16384 MiB; cache {} bytes, ratio {ratio}", bytes.len()))
}

fn plate_echo() -> Outcome {
    let fs = 100e3;
    let freqs = bins(25e3, 45e3, 14);
    // a smooth board: lobe narrower than the ray spacing near boresight
    let m = MaterialSpec::uniform("plate", 14, (0.02, 0.4), (0.9, 0.6), 0.05, 1.0);
    let scene = SceneBuilder::new(freqs.clone())
        .material(m)
        .instance("plate", shapes::plate(2.0, 2.0, 20, 20), Pose::looking_along(Vec3::new(0.0, 0.0, 1.715), -Vec3::z()), "plate")
        .emitter(Emitter::new("tx", Pose::default(), 10_000, 0, 10.0, 14))
        .receiver("rx", Pose::default())
        .build()
        .map_err(|e| e.to_string())?;
    let table = CurvatureTable::compute(&scene);
    let set = simulate(&scene, &table, Components::ALL, 1).map_err(|e| e.to_string())?;
    let call = linear_chirp(25e3, 45e3, 1e-3, fs);
    let grid = SpectralGrid::for_scene(&scene, &set, fs, call.samples.len()).map_err(|e| e.to_string())?;
    let h = pair_impulse_response(&set, 0, 0, grid).map_err(|e| e.to_string())?;
    let y = render_signal(&h, &call).map_err(|e| e.to_string())?;
    let peak = peak_index(&matched_filter(&y.samples, &call.samples));
    ensure(peak.abs_diff(1000) <= 1, || format!("peak at sample {peak}"))?;
    Ok(format!("peak at sample {peak} ({} ms)", peak as f64 / fs * 1e3))
}

fn inverse_square() -> Outcome {
    let m = MaterialSpec::uniform("m", 3, (0.2, 0.2), (0.8, 0.8), 0.7, 1.0);
    let mut mags = Vec::new();
    for scale in [1.0, 2.0] {
        let scene = SceneBuilder::new(vec![30e3, 40e3, 50e3])
            .material(m.clone())
            .instance("dot", shapes::plate(0.01, 0.01, 1, 1), Pose::looking_along(Vec3::new(0.3 * scale, 0.0, 0.8 * scale), -Vec3::z()), "m")
            .emitter(Emitter::new("tx", Pose::default(), 1, 0, 100.0, 3))
            .receiver("rx", Pose::at(Vec3::new(0.6 * scale, 0.0, 0.0)))
            .build()
            .map_err(|e| e.to_string())?;
        let cand = DiffractionCandidate {
            triangle: 0,
            instance: 0,
            barycentric: [1.0, 0.0, 0.0],
            position: Vec3::new(0.3 * scale, 0.0, 0.8 * scale),
        };
        let kept = filter_diffraction_candidates(&scene, &[cand], 0, std::f64::consts::FRAC_PI_2);
        let c = diffraction_magnitudes(&scene, 0, &kept);
        ensure(c.len() == 1, || "point source not visible".into())?;
        mags.push(c[0].clone());
    }
    let mut worst: f64 = 0.0;
    for b in 0..3 {
        let ratio = mags[0].magnitudes[b] as f64 / mags[1].magnitudes[b] as f64;
        worst = worst.max((ratio - 4.0).abs());
    }
    ensure(worst <= 1e-9, || format!("ratio deviates by {worst}"))?;
    Ok(format!("r = {:.4} and {:.4}, |ratio - 4| = {worst}", mags[0].path_length, mags[1].path_length))
}

fn curvature() -> Outcome {
    let g = vertex_mean_curvature(&shapes::icosphere(1.0, 3)).values;
    let worst = g.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.05, || format!("icosphere deviation {worst}"))?;

    let plate = shapes::plate(1.0, 1.0, 12, 12);
    let scene = SceneBuilder::new(vec![40e3])
        .material(MaterialSpec::uniform("m", 1, (0.1, 0.5), (0.9, 0.5), 0.1, 1.0))
        .instance("plate", plate.clone(), Pose::default(), "m")
        .build()
        .map_err(|e| e.to_string())?;
    let table = CurvatureTable::compute(&scene);
    let boundary = plate.boundary();
    let mut interior = 0;
    let mut flat_worst: f64 = 0.0;
    for (t, tri) in plate.triangles().iter().enumerate() {
        if tri.iter().all(|&v| !boundary[v as usize]) {
            interior += 1;
            flat_worst = flat_worst.max(table.metric[t]);
        }
    }
    ensure(interior > 0 && flat_worst < 1e-9, || format!("flat plate interior C up to {flat_worst}"))?;
    Ok(format!("max |G - 1| = {worst:.4}; {interior} interior plate triangles, max C = {flat_worst:e}"))
}

fn brdf_anchors() -> Outcome {
    let mut worst: f64 = 0.0;
    let m = MaterialSpec::uniform("m", 1, (0.05, 0.9), (0.95, 0.2), 0.0, 2.0);
    for c in [0.0, 0.3, 1.1, 2.0, 5.0] {
        let (beta, k) = map_brdf(c, &m, 0);
        worst = worst.max((specular_intensity(0.0, beta, k) - k).abs());
        let ratio = specular_intensity(beta, beta, k) / specular_intensity(0.0, beta, k);
        worst = worst.max((ratio - (-0.5f64).exp()).abs());
    }
    ensure(worst <= 1e-12, || format!("deviation {worst}"))?;
    Ok(format!("max deviation {worst:e}"))
}

fn lumpy_sphere() -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let base = shapes::icosphere(0.5, 2);
    let v = base
        .vertices()
        .iter()
        .map(|p| p * rng.random_range(0.9..1.1))
        .collect();
    TriangleMesh::new(v, base.triangles().to_vec()).unwrap()
}

fn sampling_proportionality() -> Outcome {
    let draws = 100_000;
    let mut e = Emitter::new("tx", Pose::default(), 1, 0, 10.0, 1);
    e.frustum_half_angle = std::f64::consts::PI;
    let scene = SceneBuilder::new(vec![40e3])
        .material(MaterialSpec::uniform("m", 1, (0.1, 0.5), (0.9, 0.5), 0.1, 1.0))
        .instance("lump", lumpy_sphere(), Pose::at(Vec3::new(0.0, 0.0, 2.0)), "m")
        .emitter(e)
        .build()
        .map_err(|e| e.to_string())?;
    let table = CurvatureTable::compute(&scene);
    let metric = &table.metric;
    ensure(metric.iter().all(|&c| c > 0.0), || "some triangle has zero metric".into())?;
    let cands = sample_diffraction_candidates(&scene, &table, 0, draws, 2024).map_err(|e| e.to_string())?;
    let mut counts = vec![0u64; metric.len()];
    for c in &cands {
        counts[c.triangle as usize] += 1;
    }
    let total: f64 = metric.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(metric)
        .map(|(&o, &c)| {
            let expected = draws as f64 * c / total;
            (o as f64 - expected).powi(2) / expected
        })
        .sum();
    let dof = (metric.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    ensure(p > 0.01, || format!("chi2 = {stat:.1} on {dof} dof, p = {p}"))?;
    Ok(format!("chi2 = {stat:.1} on {dof} dof, p = {p:.3}"))
}

/// Naive, single-threaded evaluation of the whole pipeline: brute-force ray
/// queries and plain loops in the same arithmetic order.
mod reference {
    use super::*;

    fn nearest(scene: &Scene, o: &Vec3, d: &Vec3, t_max: f64) -> Option<(f64, u32)> {
        nearest_brute_force(scene.triangles(), o, d, t_max).map(|h| (h.t, h.triangle))
    }

    pub fn visible(scene: &Scene, a: &Vec3, b: &Vec3) -> bool {
        let delta = b - a;
        let len = delta.norm();
        let eps = scene.epsilon();
        if len <= 2.0 * eps {
            return true;
        }
        let dir = delta / len;
        let start = a + dir * eps;
        let limit = len - 2.0 * eps;
        for tri in scene.triangles() {
            if let Some(t) = intersect_triangle(&start, &dir, tri) {
                if t > 0.0 && t < limit {
                    return false;
                }
            }
        }
        true
    }

    fn trace(scene: &Scene, e: &Emitter, ray: u32, direction: Vec3, out: &mut Vec<HitRecord>) {
        let source = e.pose.position;
        let eps = scene.epsilon();
        let (mut origin, mut dir, mut last, mut path) = (source, direction, source, 0.0);
        for bounce in 0..=e.max_bounces {
            let remaining = e.max_distance - path;
            if remaining <= 0.0 {
                return;
            }
            let Some((t, tri)) = nearest(scene, &origin, &dir, remaining) else { return };
            let position = origin + dir * t;
            let next = path + (position - last).norm();
            if next > e.max_distance || next <= path {
                return;
            }
            path = next;
            let normal = facing(&scene.triangle_normal(tri), &dir);
            let reflection = reflect(&dir, &normal).normalize();
            let lifted = position + normal * eps;
            out.push(HitRecord {
                ray,
                bounce: bounce as u32,
                position,
                triangle: tri,
                instance: scene.instance_of(tri),
                path_length: path,
                reflection,
                normal,
                occluded_to_origin: !visible(scene, &lifted, &source),
            });
            last = position;
            origin = lifted;
            dir = reflection;
            if path >= e.max_distance {
                return;
            }
        }
    }

    fn directive(e: &Emitter, departure: &Vec3, m: &mut [f32]) {
        if let Some(t) = &e.directivity {
            let (az, el) = departure_angles(&e.pose, departure);
            t.apply(az, el, m);
        }
    }

    pub fn pipeline(scene: &Scene, table: &CurvatureTable, seed: u64) -> ContributionSet {
        let alpha = scene.attenuation();
        let eps = scene.epsilon();
        let mut out: Vec<Contribution> = Vec::new();
        let (mut spec_points, mut diff_points) = (0, 0);
        for (s, e) in scene.emitters().iter().enumerate() {
            let dirs = launch_directions(e);
            let mut hits = Vec::new();
            for (i, d) in dirs.iter().enumerate() {
                trace(scene, e, i as u32, *d, &mut hits);
            }
            spec_points += hits.len() as u64;
            for (m, rx) in scene.receivers().iter().enumerate() {
                let target = rx.pose.position;
                for (n, h) in hits.iter().enumerate() {
                    let to_rx = target - h.position;
                    let leg = to_rx.norm();
                    if leg == 0.0 || to_rx.dot(&h.normal) <= 0.0 || !visible(scene, &(h.position + h.normal * eps), &target) {
                        continue;
                    }
                    let r = h.path_length + leg;
                    let gamma = angle_between(&h.reflection, &to_rx);
                    let l = geometric_loss(r).unwrap();
                    let mut mags = Vec::new();
                    for b in 0..alpha.len() {
                        let i = specular_intensity(gamma, table.beta(h.triangle, b), table.k(h.triangle, b));
                        mags.push((l * atmospheric_loss(r, alpha[b]) * i) as f32);
                    }
                    directive(e, &dirs[h.ray as usize], &mut mags);
                    out.push(Contribution {
                        kind: ContributionKind::Specular,
                        source: s as u32,
                        receiver: m as u32,
                        position: h.position,
                        path_length: r,
                        index: n as u32,
                        magnitudes: mags,
                    });
                }
            }

            let mut kept = Vec::new();
            for (i, inst) in scene.instances().iter().enumerate() {
                let (center, radius) = inst.bounding_sphere();
                if e.diffraction_candidates == 0 || !in_frustum(e, &center, radius) {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((s as u64) << 32) | i as u64);
                let range = inst.triangle_range();
                let metric = &table.metric[range.clone()];
                let mean = metric.iter().sum::<f64>() / metric.len() as f64;
                let mut cdf = Vec::new();
                let mut total = 0.0;
                for &c in metric {
                    let jitter = if 1e-3 * mean > 0.0 { rng.random::<f64>() * (1e-3 * mean) } else { 0.0 };
                    total += c + jitter;
                    cdf.push(total);
                }
                if total <= 0.0 {
                    continue;
                }
                for _ in 0..e.diffraction_candidates {
                    let u = rng.random::<f64>() * total;
                    let mut local = 0;
                    while local < cdf.len() - 1 && cdf[local] <= u {
                        local += 1;
                    }
                    let sq = rng.random::<f64>().sqrt();
                    let t = rng.random::<f64>();
                    let bary = [1.0 - sq, sq * (1.0 - t), sq * t];
                    let [a, b, c] = inst.world.corners(local);
                    let position = a * bary[0] + b * bary[1] + c * bary[2];
                    let tri = (range.start + local) as u32;
                    let n = scene.triangle_normal(tri);
                    let to_source = e.pose.position - position;
                    if to_source.norm() == 0.0 || angle_between(&n, &to_source) > e.max_incidence {
                        continue;
                    }
                    if visible(scene, &(position + facing(&n, &-to_source) * eps), &e.pose.position) {
                        kept.push((tri, position));
                    }
                }
            }
            diff_points += kept.len() as u64;
            for (m, rx) in scene.receivers().iter().enumerate() {
                let target = rx.pose.position;
                for (o, &(tri, p)) in kept.iter().enumerate() {
                    let incoming = p - e.pose.position;
                    let lifted = p + facing(&scene.triangle_normal(tri), &incoming) * eps;
                    if !visible(scene, &lifted, &target) {
                        continue;
                    }
                    let r = incoming.norm() + (target - p).norm();
                    let l = geometric_loss(r).unwrap();
                    let coeff = &scene.material_of(tri).diffraction;
                    let mut mags: Vec<f32> = Vec::new();
                    for b in 0..alpha.len() {
                        mags.push((l * atmospheric_loss(r, alpha[b]) * coeff[b]) as f32);
                    }
                    directive(e, &incoming, &mut mags);
                    out.push(Contribution {
                        kind: ContributionKind::Diffraction,
                        source: s as u32,
                        receiver: m as u32,
                        position: p,
                        path_length: r,
                        index: o as u32,
                        magnitudes: mags,
                    });
                }
            }
        }
        out.extend(direct(scene));
        out.sort_by_key(|c| (c.kind, c.source, c.receiver, c.index));
        ContributionSet {
            revision: scene.revision(),
            seed,
            components: Components::ALL,
            specular_points: spec_points,
            diffraction_points: diff_points,
            sources: scene.emitters().len() as u32,
            receivers: scene.receivers().len() as u32,
            frequencies: scene.frequencies().to_vec(),
            speed_of_sound: scene.speed_of_sound(),
            contributions: out,
        }
    }

    fn direct(scene: &Scene) -> Vec<Contribution> {
        let mut out = Vec::new();
        for (s, e) in scene.emitters().iter().enumerate() {
            for (m, rx) in scene.receivers().iter().enumerate() {
                let delta = rx.pose.position - e.pose.position;
                let r = delta.norm();
                if r <= scene.epsilon() || !visible(scene, &e.pose.position, &rx.pose.position) {
                    continue;
                }
                let l = geometric_loss(r).unwrap();
                let mut mags: Vec<f32> = (0..scene.bins())
                    .map(|b| (l * atmospheric_loss(r, scene.attenuation()[b]) * e.source_level[b]) as f32)
                    .collect();
                directive(e, &delta, &mut mags);
                out.push(Contribution {
                    kind: ContributionKind::Passive,
                    source: s as u32,
                    receiver: m as u32,
                    position: e.pose.position,
                    path_length: r,
                    index: 0,
                    magnitudes: mags,
                });
            }
        }
        out
    }
}

fn oracle_scene() -> Scene {
    let rock = MaterialSpec::uniform("rock", 3, (0.1, 0.7), (0.9, 0.3), 0.25, 3.0);
    let mut e2 = Emitter::new("tx2", Pose::new(Vec3::new(0.4, -0.3, 0.1), [0.97, 0.1, 0.2, -0.05]).unwrap(), 1500, 2, 12.0, 3);
    e2.directivity = Some(GainTable::cosine_lobe());
    e2.diffraction_candidates = 300;
    e2.frustum_half_angle = 0.9;
    let mut e1 = Emitter::new("tx1", Pose::default(), 1500, 2, 12.0, 3);
    e1.source_level = vec![1.0, 0.8, 0.6];
    e1.max_incidence = 1.2;
    SceneBuilder::new(vec![30e3, 40e3, 50e3])
        .attenuation(vec![0.7, 1.0, 1.4])
        .material(rock)
        .instance("ball", shapes::icosphere(0.35, 2), Pose::at(Vec3::new(0.2, 0.1, 1.8)), "rock")
        .instance(
            "crate",
            shapes::tessellated_cuboid(Vec3::new(0.6, 0.4, 0.5), 3),
            Pose::new(Vec3::new(-0.6, 0.3, 1.4), [0.9, 0.3, -0.2, 0.1]).unwrap(),
            "rock",
        )
        .instance("dome", shapes::dome(0.4, 4, 12), Pose::looking_along(Vec3::new(0.1, -0.5, 2.6), -Vec3::z()), "rock")
        .instance("wall", shapes::plate(4.0, 4.0, 8, 8), Pose::new(Vec3::new(0.0, 0.0, 3.2), [0.1, 0.99, 0.03, 0.0]).unwrap(), "rock")
        .emitter(e1)
        .emitter(e2)
        .receiver("a", Pose::at(Vec3::new(0.05, 0.0, 0.0)))
        .receiver("b", Pose::at(Vec3::new(-0.05, 0.02, 0.0)))
        .receiver("c", Pose::at(Vec3::new(0.6, 0.5, 0.3)))
        .receiver("d", Pose::at(Vec3::new(-0.8, -0.2, 0.9)))
        .build()
        .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let scene = oracle_scene();
    ensure(scene.triangle_count() <= 1000, || format!("{} triangles", scene.triangle_count()))?;
    let table = CurvatureTable::compute(&scene);
    let fast = simulate(&scene, &table, Components::ALL, 31).map_err(|e| e.to_string())?;
    let slow = reference::pipeline(&scene, &table, 31);
    let counts = |k| fast.contributions.iter().filter(|c| c.kind == k).count();
    let (s, d, p) = (
        counts(ContributionKind::Specular),
        counts(ContributionKind::Diffraction),
        counts(ContributionKind::Passive),
    );
    ensure(s > 0 && d > 0 && p > 0, || format!("degenerate run: {s}/{d}/{p}"))?;
    if fast != slow {
        let first = fast.contributions.iter().zip(&slow.contributions).position(|(a, b)| a != b);
        return Err(format!(
            "sets differ: {} vs {} records, first mismatch at {first:?}",
            fast.contributions.len(),
            slow.contributions.len()
        ));
    }
    Ok(format!("{} triangles; {s} specular, {d} diffraction, {p} passive records bit-identical", scene.triangle_count()))
}

fn bumpy_plate(bumps: usize) -> Scene {
    let tx = Vec3::new(0.0, -1.0, 0.4);
    let freqs = bins(25e3, 50e3, 6);
    let frame = Pose::looking_along(Vec3::new(0.0, 0.0, 1.2), -Vec3::z());
    let mut b = SceneBuilder::new(freqs)
        .attenuation(vec![0.8, 0.9, 1.0, 1.1, 1.2, 1.3])
        .material(MaterialSpec::uniform("board", 6, (0.08, 0.5), (0.9, 0.5), 0.02, 4.0))
        .material(MaterialSpec::uniform("bump", 6, (0.08, 0.5), (0.9, 0.5), 0.02, 4.0))
        .instance("plate", shapes::plate(1.5, 1.5, 30, 30), frame, "board")
        // a bat flying over the surface, looking down and ahead
        .emitter(Emitter::new("tx", Pose::looking_along(tx, Vec3::new(0.0, 1.0, 0.8)), 20_000, 2, 8.0, 6))
        .receiver("rx", Pose::at(tx + Vec3::new(0.02, 0.0, 0.0)));
    let dome = Arc::new(shapes::dome(0.025, 4, 10));
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..bumps {
        let local = Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), 0.0);
        b = b.shared_instance(&format!("bump{i}"), dome.clone(), frame.compose(&Pose::at(local)), 1.0, "bump");
    }
    b.build().unwrap()
}

fn roughness() -> Outcome {
    let fs = 200e3;
    let call = linear_chirp(25e3, 50e3, 2e-3, fs);
    let render = |scene: &Scene| -> Result<(f64, Vec<f64>), String> {
        let table = CurvatureTable::compute(scene);
        let set = simulate(scene, &table, Components::SPECULAR | Components::DIFFRACTION, 5).map_err(|e| e.to_string())?;
        let grid = SpectralGrid::covering(fs, 0.03, call.samples.len()).map_err(|e| e.to_string())?;
        let h = pair_impulse_response(&set, 0, 0, grid).map_err(|e| e.to_string())?;
        let y = render_signal(&h, &call).map_err(|e| e.to_string())?;
        Ok((rms_spread(&h.samples, fs), y.samples))
    };
    let (bare, y_bare) = render(&bumpy_plate(0))?;
    let (rough, y_rough) = render(&bumpy_plate(200))?;
    ensure(rough > bare, || format!("spread {rough} not above {bare}"))?;
    let s_bare = spectrogram(&y_bare, fs, 256, 64);
    let s_rough = spectrogram(&y_rough, fs, 256, 64);
    let diff = difference_db(&s_rough, &s_bare, 1e-12).map_err(|e| e.to_string())?;
    ensure(!diff.is_empty() && diff.iter().flatten().all(|x| x.is_finite()), || "difference spectrogram not finite".into())?;
    let hottest = diff.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(hottest > 0.0, || "bumps added no energy anywhere".into())?;
    Ok(format!(
        "RMS spread {:.1} us -> {:.1} us; difference spectrogram {}x{}, max {hottest:.1} dB",
        bare * 1e6,
        rough * 1e6,
        diff.len(),
        diff[0].len()
    ))
}

fn field_scene(rays: usize, receivers: usize, bin_count: usize) -> Scene {
    let freqs = bins(20e3, 85e3, bin_count);
    let mut e = Emitter::new("tx", Pose::looking_along(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.3, 1.0)), rays, 2, 12.0, bin_count);
    e.diffraction_candidates = 256;
    let mut b = SceneBuilder::new(freqs)
        .attenuation(vec![1.0; bin_count])
        .material(MaterialSpec::uniform("veg", bin_count, (0.1, 0.8), (0.9, 0.3), 0.2, 3.0))
        .instance("ground", shapes::plate(12.0, 12.0, 24, 24), Pose::at(Vec3::new(0.0, 4.0, -0.5)), "veg")
        .emitter(e);
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let shrub = Arc::new(shapes::icosphere(0.4, 3));
    for i in 0..12 {
        let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(1.0..6.0), rng.random_range(-0.2..1.5));
        b = b.shared_instance(&format!("shrub{i}"), shrub.clone(), Pose::at(p), rng.random_range(0.5..1.5), "veg");
    }
    for i in 0..receivers {
        let a = i as f64 / receivers as f64 * std::f64::consts::TAU;
        b = b.receiver(&format!("mic{i}"), Pose::at(Vec3::new(0.1 * a.cos(), 0.1 * a.sin(), 0.5)));
    }
    b.build().unwrap()
}

fn performance() -> Outcome {
    let scene = field_scene(80_000, 32, 14);
    let start = Instant::now();
    let table = CurvatureTable::compute(&scene);
    let set = simulate(&scene, &table, Components::ALL, 9).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(set.specular_points > 0, || "no hits".into())?;
    Ok(format!(
        "{} triangles, {} hits, {} records in {:.2} s",
        scene.triangle_count(),
        set.specular_points,
        set.contributions.len(),
        took.as_secs_f64()
    ))
}

/// Wall time of the magnitude stage alone, best of several runs.
fn magnitude_time(scene: &Scene) -> Duration {
    let table = CurvatureTable::compute(scene);
    let hits = echotrace::tracer::trace_specular(scene, 0);
    let e = &scene.emitters()[0];
    let sampled = sample_diffraction_candidates(scene, &table, 0, e.diffraction_candidates, 3).unwrap();
    let kept = filter_diffraction_candidates(scene, &sampled, 0, e.max_incidence);
    (0..5)
        .map(|_| {
            let t = Instant::now();
            let a = specular_magnitudes(scene, &hits, &table).unwrap();
            let b = diffraction_magnitudes(scene, 0, &kept);
            let c = passive_magnitudes(scene);
            std::hint::black_box((a, b, c));
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn complexity() -> Outcome {
    let base = magnitude_time(&field_scene(8_000, 8, 16)).as_secs_f64();
    let mut report = Vec::new();
    let mut bad = Vec::new();
    for (name, scene) in [
        ("rays", field_scene(16_000, 8, 16)),
        ("receivers", field_scene(8_000, 16, 16)),
        ("bins", field_scene(8_000, 8, 32)),
    ] {
        let ratio = magnitude_time(&scene).as_secs_f64() / base;
        report.push(format!("{name} x{ratio:.2}"));
        if !(1.0..=4.0).contains(&ratio) {
            bad.push(name);
        }
    }
    ensure(bad.is_empty(), || format!("out of [1, 4]: {}", report.join(", ")))?;
    Ok(report.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("footprint formula", Duration::from_secs(1), footprint),
        ("plate echo delay", Duration::from_secs(10), plate_echo),
        ("inverse-square law", Duration::from_secs(1), inverse_square),
        ("curvature correctness", Duration::from_secs(5), curvature),
        ("specular lobe anchors", Duration::from_secs(1), brdf_anchors),
        ("sampling proportionality", Duration::from_secs(10), sampling_proportionality),
        ("sequential oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        ("roughness spreads the echo", Duration::from_secs(60), roughness),
        ("performance smoke", Duration::from_secs(60), performance),
        ("magnitude-stage complexity", Duration::from_secs(120), complexity),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > budget => Err(format!("{msg}; took {:.2} s, budget {} s", took.as_secs_f64(), budget.as_secs())),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg} [{:.2} s]", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{:.2} s]", took.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
