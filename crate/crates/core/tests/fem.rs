use std::sync::Arc;

use pistress_core::fem::{
    analyze, build_mesh_cantilever, build_mesh_lshape, build_mesh_truss_like, Axis, Constraint, LoadCase, LoadEdge,
    Material, Mesh,
};

const H: f64 = 100.0;

fn mesh(size: f64) -> Arc<Mesh> {
    Arc::new(build_mesh_cantilever(H, size).unwrap())
}

fn nearest(mesh: &Mesh, p: [f64; 2]) -> usize {
    (0..mesh.num_nodes())
        .min_by(|&a, &b| {
            let d = |n: usize| (mesh.nodes[n][0] - p[0]).powi(2) + (mesh.nodes[n][1] - p[1]).powi(2);
            d(a).total_cmp(&d(b))
        })
        .unwrap()
}

#[test]
fn tip_deflection_matches_timoshenko_beam() {
    let m = mesh(H / 40.0);
    let mat = Material::default();
    let p = 1000.0;
    let sol = analyze(&m, &mat, &LoadCase::distributed(Constraint::Fixed, Axis::Y, LoadEdge::FreeEnd, p)).unwrap();
    let l = 2.0 * H;
    let i = mat.thickness * H.powi(3) / 12.0;
    let g = mat.youngs_modulus / (2.0 * (1.0 + mat.poissons_ratio));
    let area = mat.thickness * H;
    let oracle = p * l.powi(3) / (3.0 * mat.youngs_modulus * i) + p * l / (5.0 / 6.0 * g * area);
    let tip = sol.displacement(nearest(&m, [l, H / 2.0]))[1];
    let err = (tip - oracle) / oracle;
    assert!(err.abs() < 0.02, "tip {tip} vs beam theory {oracle} ({:.2}%)", 100.0 * err);
}

#[test]
fn axial_stress_is_uniform_away_from_the_root() {
    let m = mesh(H / 40.0);
    let mat = Material::default();
    let p = 1000.0;
    let sol = analyze(&m, &mat, &LoadCase::distributed(Constraint::Fixed, Axis::X, LoadEdge::FreeEnd, p)).unwrap();
    let expected = p / (H * mat.thickness);
    for n in 0..m.num_nodes() {
        if m.nodes[n][0] >= H {
            let s = sol.stress.sigma_x[n];
            assert!((s - expected).abs() < 0.01 * expected, "node {n} at {:?}: {s}", m.nodes[n]);
        }
    }
}

#[test]
fn symmetric_load_gives_symmetric_stress() {
    let m = mesh(H / 10.0);
    let sol =
        analyze(&m, &Material::default(), &LoadCase::distributed(Constraint::Fixed, Axis::X, LoadEdge::FreeEnd, 1.0))
            .unwrap();
    let s = &sol.stress;
    let scale = s.sigma_x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for n in 0..m.num_nodes() {
        let [x, y] = m.nodes[n];
        let k = nearest(&m, [x, H - y]);
        assert!((s.sigma_x[n] - s.sigma_x[k]).abs() < 1e-9 * scale);
        assert!((s.sigma_y[n] - s.sigma_y[k]).abs() < 1e-9 * scale);
        assert!((s.tau_xy[n] + s.tau_xy[k]).abs() < 1e-9 * scale);
    }
}

#[test]
fn reactions_balance_loads_for_every_family() {
    let meshes = [
        mesh(H / 10.0),
        Arc::new(build_mesh_lshape(H, H / 5.0).unwrap()),
        Arc::new(build_mesh_truss_like("truss_cantilever_v1", H, H / 10.0).unwrap()),
    ];
    let loads = [
        LoadCase::concentrated(Constraint::Fixed, Axis::Y, 2, 1000.0),
        LoadCase::concentrated(Constraint::Sliding, Axis::X, 5, 1000.0),
        LoadCase::distributed(Constraint::Sliding, Axis::Y, LoadEdge::FreeEnd, 1000.0),
    ];
    for m in &meshes {
        for load in &loads {
            let sol = analyze(m, &Material::default(), load).unwrap();
            for c in 0..2 {
                let applied: f64 = sol.applied.iter().skip(c).step_by(2).sum();
                let reaction: f64 = sol.reactions.iter().skip(c).step_by(2).sum();
                assert!((applied + reaction).abs() <= 1e-8 * 1000.0, "{}: {applied} + {reaction}", load.label());
            }
        }
    }
}

#[test]
fn refinement_raises_strain_energy() {
    let mat = Material::default();
    let pairs = [
        (mesh(H / 10.0), mesh(H / 40.0)),
        (Arc::new(build_mesh_lshape(H, H / 5.0).unwrap()), Arc::new(build_mesh_lshape(H, H / 20.0).unwrap())),
    ];
    for (coarse, fine) in &pairs {
        for load in [
            LoadCase::concentrated(Constraint::Fixed, Axis::Y, 0, 1000.0),
            LoadCase::distributed(Constraint::Sliding, Axis::X, LoadEdge::FreeEnd, 1000.0),
        ] {
            let ec = analyze(coarse, &mat, &load).unwrap().strain_energy;
            let ef = analyze(fine, &mat, &load).unwrap().strain_energy;
            assert!(ef >= ec * (1.0 - 1e-12), "{}: fine {ef} < coarse {ec}", load.label());
        }
    }
}
