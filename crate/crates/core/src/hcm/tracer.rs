//! Image-method specular tracer: line of sight plus reflections up to order 2.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::{PathKind, RayPath};
use crate::geometry::Point3;
use crate::scene::Scene;
use crate::SPEED_OF_LIGHT;

/// Smallest path length considered; shorter paths are dropped.
const MIN_PATH_M: f64 = 1e-9;

fn friis(wavelength: f64, length: f64) -> f64 {
    let a = wavelength / (4.0 * core::f64::consts::PI * length);
    a * a
}

fn db_to_linear(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Traces the specular paths from the scene transmitter to `rx`.
///
/// Rays come back in a fixed order: line of sight, single reflections by
/// surface index, then double reflections by (first, second) surface index.
pub fn trace_specular(scene: &Scene, rx: Point3) -> Vec<RayPath> {
    let tx = scene.tx_position();
    let lambda = scene.wavelength();
    let surfaces = scene.surfaces();
    let mut rays = Vec::new();

    let d = tx.distance(rx);
    if d > MIN_PATH_M && !scene.blocked(tx, rx, &[]) {
        rays.push(RayPath {
            power: friis(lambda, d),
            delay_s: d / SPEED_OF_LIGHT,
            aoa_rad: (tx - rx).azimuth(),
            first_bounce: None,
            last_bounce: None,
            kind: PathKind::LineOfSight,
            path_id: 0,
        });
    }

    // Single reflections.
    for (i, s) in surfaces.iter().enumerate() {
        let plane = s.plane();
        let (dt, dr) = (plane.signed_distance(tx), plane.signed_distance(rx));
        if dt * dr <= 0.0 {
            continue;
        }
        let image = plane.mirror(tx);
        let Some(u) = plane.segment_parameter(image, rx) else { continue };
        if !(u > 0.0 && u < 1.0) {
            continue;
        }
        let p = image.lerp(rx, u);
        if !s.contains(p) || scene.blocked(tx, p, &[i]) || scene.blocked(p, rx, &[i]) {
            continue;
        }
        let length = image.distance(rx);
        if length <= MIN_PATH_M {
            continue;
        }
        rays.push(RayPath {
            power: friis(lambda, length) * db_to_linear(s.reflection_loss_db()),
            delay_s: length / SPEED_OF_LIGHT,
            aoa_rad: (p - rx).azimuth(),
            first_bounce: Some(p),
            last_bounce: Some(p),
            kind: PathKind::SingleReflection,
            path_id: 1 + i as u64,
        });
    }

    // Double reflections: tx -> surface i -> surface j -> rx.
    for (i, si) in surfaces.iter().enumerate() {
        let pi_ = si.plane();
        let image1 = pi_.mirror(tx);
        for (j, sj) in surfaces.iter().enumerate() {
            if i == j {
                continue;
            }
            let pj = sj.plane();
            let image2 = pj.mirror(image1);
            let Some(u2) = pj.segment_parameter(image2, rx) else { continue };
            if !(u2 > 0.0 && u2 < 1.0) {
                continue;
            }
            let p2 = image2.lerp(rx, u2);
            if !sj.contains(p2) {
                continue;
            }
            let Some(u1) = pi_.segment_parameter(image1, p2) else { continue };
            if !(u1 > 0.0 && u1 < 1.0) {
                continue;
            }
            let p1 = image1.lerp(p2, u1);
            if !si.contains(p1) {
                continue;
            }
            // Each leg must approach its mirror from the reflecting side.
            if pi_.signed_distance(tx) * pi_.signed_distance(p2) <= 0.0
                || pj.signed_distance(p1) * pj.signed_distance(rx) <= 0.0
            {
                continue;
            }
            if scene.blocked(tx, p1, &[i])
                || scene.blocked(p1, p2, &[i, j])
                || scene.blocked(p2, rx, &[j])
            {
                continue;
            }
            let length = image2.distance(rx);
            if length <= MIN_PATH_M {
                continue;
            }
            let loss = db_to_linear(si.reflection_loss_db() + sj.reflection_loss_db());
            rays.push(RayPath {
                power: friis(lambda, length) * loss,
                delay_s: length / SPEED_OF_LIGHT,
                aoa_rad: (p2 - rx).azimuth(),
                first_bounce: Some(p1),
                last_bounce: Some(p2),
                kind: PathKind::DoubleReflection,
                path_id: 1 + (surfaces.len() * (1 + i) + j) as u64,
            });
        }
    }
    rays
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Surface;
    use alloc::vec;

    #[test]
    fn free_space_friis() {
        let scene = Scene::free_space(Point3::new(0.0, 0.0, 1.5), 5.5e9, 1e8).unwrap();
        let rays = trace_specular(&scene, Point3::new(10.0, 0.0, 1.5));
        assert_eq!(rays.len(), 1);
        let r = &rays[0];
        assert_eq!(r.kind, PathKind::LineOfSight);
        assert!((r.delay_s - 33.356_409_519_815_2e-9).abs() < 1e-18);
        let want = (SPEED_OF_LIGHT / (4.0 * core::f64::consts::PI * 10.0 * 5.5e9)).powi(2);
        assert!((r.power - want).abs() <= 1e-15 * want);
        assert!(r.first_bounce.is_none() && r.last_bounce.is_none());
        assert!((r.aoa_rad.abs() - core::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn occluded_receiver_has_no_paths() {
        let wall = Surface::wall((5.0, -50.0), (5.0, 50.0), -10.0, 10.0, 6.0).unwrap();
        let scene =
            Scene::new(vec![wall], Point3::new(0.0, 0.0, 1.5), 5.5e9, 1e8, vec![]).unwrap();
        assert!(trace_specular(&scene, Point3::new(10.0, 0.0, 1.5)).is_empty());
    }

    #[test]
    fn delays_respect_straight_line_bound() {
        let walls = vec![
            Surface::wall((0.0, 0.0), (40.0, 0.0), 0.0, 4.0, 6.0).unwrap(),
            Surface::wall((40.0, 0.0), (40.0, 20.0), 0.0, 4.0, 6.0).unwrap(),
            Surface::wall((40.0, 20.0), (0.0, 20.0), 0.0, 4.0, 6.0).unwrap(),
            Surface::wall((0.0, 20.0), (0.0, 0.0), 0.0, 4.0, 6.0).unwrap(),
        ];
        let tx = Point3::new(5.0, 10.0, 3.0);
        let scene = Scene::new(walls, tx, 28e9, 1e9, vec![]).unwrap();
        let rx = Point3::new(30.0, 7.0, 1.5);
        let rays = trace_specular(&scene, rx);
        // LoS, 4 single and 8 double reflections inside a convex rectangle
        // (opposite-wall pairs and adjacent corner pairs).
        assert_eq!(rays.iter().filter(|r| r.kind == PathKind::LineOfSight).count(), 1);
        assert_eq!(rays.iter().filter(|r| r.kind == PathKind::SingleReflection).count(), 4);
        assert!(rays.iter().filter(|r| r.kind == PathKind::DoubleReflection).count() >= 4);
        let bound = tx.distance(rx) / SPEED_OF_LIGHT;
        for r in &rays {
            assert!(r.delay_s >= bound * (1.0 - 1e-12));
            assert!(r.power > 0.0);
        }
    }
}
