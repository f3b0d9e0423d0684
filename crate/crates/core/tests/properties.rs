use std::collections::BTreeMap;

use axisprompt_core::answer::{format_points, format_ranges, parse_all, parse_choice, parse_points, parse_ranges, ParsedAnswer};
use axisprompt_core::eval::{iou_aabb, score_reconstruction, TolerancePolicy};
use axisprompt_core::geometry::{build_frame, Axis};
use axisprompt_core::scene::Box3D;
use axisprompt_core::tasks::compose_prompt;
use axisprompt_core::{CameraModel, Handedness, Vec3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit_dir() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter_map("near zero", |v| if v.norm() > 0.1 { v.normalized() } else { None })
}

fn handedness() -> impl Strategy<Value = Handedness> {
    prop_oneof![Just(Handedness::Right), Just(Handedness::Left)]
}

fn box3() -> impl Strategy<Value = Box3D> {
    (vec3(100.0), (0.1f64..50.0, 0.1f64..50.0, 0.1f64..50.0)).prop_map(|(min, (w, d, h))| Box3D::new(min, min + Vec3::new(w, d, h)).unwrap())
}

fn camera() -> impl Strategy<Value = CameraModel> {
    (unit_dir(), 50.0f64..500.0, vec3(20.0), 200.0f64..900.0).prop_filter_map("up parallel", |(dir, dist, target, f)| {
        let eye = target + dir * dist;
        CameraModel::look_at(eye, target, Vec3::Z, f, f, 320.0, 240.0, 640, 480).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn frame_round_trip(origin in vec3(1e3), xh in unit_dir(), yh in unit_dir(), h in handedness(), p in vec3(1e3)) {
        prop_assume!(xh.cross(yh).norm() > 1e-3);
        let f = build_frame(origin, xh, yh, h, 10.0).unwrap();
        let back = f.world_to_frame(f.frame_to_world(p));
        prop_assert!(back.distance(p) <= 1e-9 * p.norm().max(1.0));
        let w = f.frame_to_world(f.world_to_frame(p));
        prop_assert!(w.distance(p) <= 1e-9 * (p.norm() + origin.norm()).max(1.0));
    }

    #[test]
    fn handedness_law(xh in unit_dir(), yh in unit_dir()) {
        prop_assume!(xh.cross(yh).norm() > 1e-3);
        let r = build_frame(Vec3::ZERO, xh, yh, Handedness::Right, 1.0).unwrap();
        let l = build_frame(Vec3::ZERO, xh, yh, Handedness::Left, 1.0).unwrap();
        prop_assert!((r.basis().determinant() - 1.0).abs() < 1e-12);
        prop_assert!((l.basis().determinant() + 1.0).abs() < 1e-12);
        prop_assert_eq!(r.axis_x(), l.axis_x());
        prop_assert_eq!(r.axis_y(), l.axis_y());
        prop_assert_eq!(r.axis_z(), -l.axis_z());
        prop_assert!(r.axis_x().cross(r.axis_y()).distance(r.axis_z()) < 1e-12);
    }

    #[test]
    fn projection_is_constant_along_rays(cam in camera(), p in vec3(20.0), s in 0.2f64..5.0) {
        let c = cam.center();
        let q = c + (p - c) * s;
        prop_assume!(cam.depth(p) > 1.0);
        let a = cam.project(p).unwrap();
        let b = cam.project(q).unwrap();
        prop_assert!(a.distance(b) <= 1e-9 * (1.0 + a.u.abs() + a.v.abs()));
    }

    #[test]
    fn projection_preserves_collinearity(cam in camera(), a in vec3(20.0), b in vec3(20.0), t in 0.0f64..1.0) {
        let m = a + (b - a) * t;
        let (pa, pb, pm) = (cam.project(a).unwrap(), cam.project(b).unwrap(), cam.project(m).unwrap());
        let cross = (pb.u - pa.u) * (pm.v - pa.v) - (pb.v - pa.v) * (pm.u - pa.u);
        let scale = pa.distance(pb).max(1.0) * pa.distance(pm).max(1.0);
        prop_assert!(cross.abs() <= 1e-7 * scale);
    }

    #[test]
    fn iou_symmetric_bounded_translation_invariant(a in box3(), b in box3(), d in vec3(100.0)) {
        let ab = iou_aabb(&a, &b);
        prop_assert_eq!(ab, iou_aabb(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        let moved = iou_aabb(&a.translated(d), &b.translated(d));
        prop_assert!((moved - ab).abs() < 1e-9);
        prop_assert!((iou_aabb(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tolerance_is_monotone(gt in vec3(100.0), off in vec3(30.0), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let truth: BTreeMap<String, Vec3> = [("B".to_string(), gt)].into();
        let ans = ParsedAnswer { points: [("B".to_string(), gt + off)].into(), ..Default::default() };
        let p = |t| TolerancePolicy { point_rel_tol: t, ..Default::default() };
        let a = score_reconstruction("x", &ans, &truth, 100.0, &p(lo)).accuracy;
        let b = score_reconstruction("x", &ans, &truth, 100.0, &p(hi)).accuracy;
        prop_assert!(b >= a);
    }

    #[test]
    fn oracle_formats_round_trip(pts in proptest::collection::btree_map("[A-H]", vec3(1e4), 1..6), lo in vec3(1e3), ext in vec3(1e3)) {
        prop_assert_eq!(parse_points(&format_points(&pts)), pts);
        let mut r = BTreeMap::new();
        r.insert(Axis::X, (lo.x, lo.x + ext.x.abs()));
        r.insert(Axis::Y, (lo.y, lo.y + ext.y.abs()));
        r.insert(Axis::Z, (lo.z, lo.z + ext.z.abs()));
        prop_assert_eq!(parse_ranges(&format_ranges(&r)), r);
    }

    #[test]
    fn bound_values_are_inserted_verbatim(v in "\\PC*") {
        let b: BTreeMap<String, String> = [("v".to_string(), v.clone())].into();
        prop_assert_eq!(compose_prompt("[{v}] {{v}}", &b).unwrap(), format!("[{v}] {{v}}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parsers_are_total(s in "\\PC*") {
        let _ = parse_all(&s);
        let _ = parse_choice(&s, &["P1", "P2", "P3", "P4"]);
    }

    #[test]
    fn parsers_are_total_on_answer_like_text(s in "[ABCXYZxyz:()\\[\\],.0-9 \\-−–toandfrom\n]{0,80}") {
        let a = parse_all(&s);
        for (lo, hi) in a.ranges.values() {
            prop_assert!(lo <= hi);
        }
        let _ = parse_choice(&s, &["A", "B"]);
    }
}
