mod common;

use std::sync::Arc;

use ccfield::compose::{composite_sample, softmax, warp_ray, AffineTransform, Scene};
use ccfield::render::{march_ray, ray_aabb, render_image, Camera, RenderOptions};
use ccfield::{Aabb, FieldPair, RankCount};
use common::{max_pixel_diff, random_model, rng};
use proptest::prelude::*;
use rand::Rng;

fn object(seed: u64, half: f64) -> Arc<FieldPair> {
    let mut m = random_model(seed, 6, &[(2, 1)], &[(2, 1), (1, 1)], 2);
    m.aabb = Aabb::cube(half);
    Arc::new(m)
}

fn camera(eye: [f64; 3], w: u32) -> Camera {
    Camera::look_at(w, w, 0.7, eye, [0.0; 3], [0.0, 0.0, 1.0]).unwrap()
}

fn unit_quat(v: [f64; 4]) -> [f64; 4] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_sums_to_one(v in proptest::collection::vec(0.0f64..1e4, 1..6)) {
        let w = softmax(&v);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        prop_assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn co_located_twins_act_as_doubled_density(sigma in 0.0f64..50.0, c in [0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0], delta in 1e-3f64..0.1) {
        let (a2, c2) = composite_sample(&[sigma, sigma], &[c, c], delta);
        let (a1, c1) = composite_sample(&[2.0 * sigma], &[c], delta);
        prop_assert!((a2 - a1).abs() < 1e-12);
        for k in 0..3 {
            prop_assert!((c2[k] - c1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_inverts(t in [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0],
                         q in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
                         s in [0.2f64..3.0, 0.2f64..3.0, 0.2f64..3.0]) {
        prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        let tf = AffineTransform::new(t, unit_quat(q), s).unwrap();
        let id = tf.object_to_world() * tf.world_to_object();
        prop_assert!((id - nalgebra::Matrix4::identity()).abs().max() < 1e-5);
        let p = [0.3, -0.7, 1.1];
        let back = tf.point_to_world(tf.point_to_object(p));
        prop_assert!(common::max_abs_diff(&back, &p) < 1e-9);
    }

    #[test]
    fn rigid_motion_is_a_camera_move(seed in any::<u64>(), axis in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
                                     angle in -3.0f64..3.0, t in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]) {
        prop_assume!(axis.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        let m = object(seed, 0.6);
        let tf = AffineTransform::rigid(axis, angle, t).unwrap();
        let mut scene = Scene::new([1.0; 3]);
        scene.add_instance(Arc::clone(&m), tf.clone(), None).unwrap();
        let opts = RenderOptions::default();
        let cam = camera([3.0, 1.0, 0.8], 12);
        let moved = render_image(&scene, &cam, &scene.options(&opts));
        let solo = render_image(m.as_ref(), &cam.transformed(&tf.world_to_object()).unwrap(), &opts);
        prop_assert!(max_pixel_diff(&moved, &solo) < 1e-5);
    }
}

#[test]
fn softmax_example_and_singletons() {
    let w = softmax(&[0.0, 9f64.ln()]);
    assert!((w[0] - 0.1).abs() < 1e-12 && (w[1] - 0.9).abs() < 1e-12);
    let (a, c) = composite_sample(&[2.0], &[[0.1, 0.2, 0.3]], 0.05);
    assert!((a - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    assert_eq!(c, [0.1, 0.2, 0.3]);
    let (a, c) = composite_sample(&[1.5, 1.5], &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 0.1);
    assert!((a - (1.0 - (-0.3f64).exp())).abs() < 1e-15);
    assert!((c[0] - 0.5).abs() < 1e-15 && (c[2] - 0.5).abs() < 1e-15);
}

#[test]
fn quarter_turn_maps_x_to_minus_y() {
    let tf = AffineTransform::rigid([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [0.0; 3]).unwrap();
    let w = warp_ray(&ccfield::render::Ray::new([0.0; 3], [1.0, 0.0, 0.0]).unwrap(), &tf);
    assert!(common::max_abs_diff(&w.ray.dir, &[0.0, -1.0, 0.0]) < 1e-12);
    assert!((w.length_scale - 1.0).abs() < 1e-12);
}

#[test]
fn instance_order_does_not_matter() {
    let (a, b, c) = (object(1, 0.5), object(2, 0.4), object(3, 0.45));
    let place = [
        (a, AffineTransform::translation([-0.3, 0.0, 0.0])),
        (b, AffineTransform::rigid([0.0, 1.0, 0.0], 0.7, [0.25, 0.1, 0.0]).unwrap()),
        (c, AffineTransform::new([0.0, 0.3, -0.2], [1.0, 0.0, 0.0, 0.0], [1.5, 0.8, 1.0]).unwrap()),
    ];
    let build = |order: &[usize]| {
        let mut s = Scene::new([1.0; 3]);
        for &i in order {
            s.add_instance(Arc::clone(&place[i].0), place[i].1.clone(), None).unwrap();
        }
        s
    };
    let cam = camera([2.5, -1.5, 1.0], 16);
    let opts = RenderOptions::default();
    let base = render_image(&build(&[0, 1, 2]), &cam, &opts);
    for order in [[2, 1, 0], [1, 0, 2], [2, 0, 1]] {
        assert!(max_pixel_diff(&base, &render_image(&build(&order), &cam, &opts)) < 1e-6);
    }
}

#[test]
fn rays_missing_the_second_object_see_only_the_first() {
    let (a, b) = (object(4, 0.5), object(5, 0.5));
    let (ta, tb) = (AffineTransform::translation([-1.5, 0.0, 0.0]), AffineTransform::translation([1.5, 0.0, 0.0]));
    let mut scene = Scene::new([1.0; 3]);
    scene.add_instance(Arc::clone(&a), ta.clone(), None).unwrap();
    scene.add_instance(Arc::clone(&b), tb.clone(), None).unwrap();
    let mut only_a = Scene::new([1.0; 3]);
    only_a.add_instance(a, ta, None).unwrap();
    let b_box = tb.world_aabb(&b.aabb);
    let cam = Camera::look_at(24, 24, 0.9, [-1.5, -3.0, 0.4], [-1.2, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
    let opts = RenderOptions::default();
    let mut checked = 0;
    for py in 0..24 {
        for px in 0..24 {
            let ray = cam.ray(px, py);
            if ray_aabb(&ray, &b_box).is_some() {
                continue;
            }
            let (x, y) = (scene.trace_pixel(&ray, &opts), only_a.trace_pixel(&ray, &opts));
            assert!(common::max_abs_diff(&x, &y) < 1e-5);
            checked += 1;
        }
    }
    assert!(checked > 300);
}

trait TracePixel {
    fn trace_pixel(&self, ray: &ccfield::render::Ray, opts: &RenderOptions) -> [f64; 3];
}

impl TracePixel for Scene {
    fn trace_pixel(&self, ray: &ccfield::render::Ray, opts: &RenderOptions) -> [f64; 3] {
        use ccfield::render::Renderable;
        self.trace(ray, opts).rgb
    }
}

#[test]
fn object_behind_the_camera_changes_nothing() {
    let a = object(6, 0.5);
    let mut scene = Scene::new([1.0; 3]);
    scene.add_instance(Arc::clone(&a), AffineTransform::identity(), None).unwrap();
    let cam = camera([3.0, 0.0, 0.0], 16);
    let opts = RenderOptions::default();
    let before = render_image(&scene, &cam, &opts);
    let id = scene.add_instance(a, AffineTransform::translation([9.0, 0.0, 0.0]), None).unwrap();
    assert_eq!(render_image(&scene, &cam, &opts), before);
    scene.remove_instance(id).unwrap();
    assert_eq!(render_image(&scene, &cam, &opts), before);
    assert!(scene.remove_instance(id).is_err());
}

#[test]
fn single_identity_object_matches_the_model_render() {
    let m = object(7, 0.6);
    let mut scene = Scene::new([1.0; 3]);
    scene.add_instance(Arc::clone(&m), AffineTransform::identity(), None).unwrap();
    let mut r = rng(2);
    let opts = RenderOptions::default();
    for _ in 0..200 {
        let o: [f64; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let d: [f64; 3] = std::array::from_fn(|a| r.random_range(-0.3..0.3) - o[a]);
        let ray = ccfield::render::Ray::new(o, d).unwrap();
        let x = scene.trace_pixel(&ray, &opts);
        let y = march_ray(m.as_ref(), &ray, &opts).rgb;
        assert!(common::max_abs_diff(&x, &y) < 1e-5);
    }
}

#[test]
fn rank_bookkeeping_adds_up() {
    let mut scene = Scene::new([1.0; 3]);
    let a = object(8, 0.5);
    scene.add_instance(Arc::clone(&a), AffineTransform::identity(), None).unwrap();
    let (d0, c0) = scene.total_ranks();
    let id = scene.add_instance(Arc::clone(&a), AffineTransform::translation([2.0, 0.0, 0.0]), Some(RankCount::new(2, 1))).unwrap();
    let (d1, c1) = scene.total_ranks();
    assert_eq!((d1.vec - d0.vec, d1.mat - d0.mat), (2, 1));
    assert_eq!((c1.vec - c0.vec, c1.mat - c0.mat), (2, 1));
    scene.set_lod(id, None).unwrap();
    assert_eq!(scene.total_ranks().1, RankCount::new(6, 4));
    assert!(scene.set_lod(id, Some(RankCount::new(9, 0))).is_err());
}
