use crate::tensor::Real;

fn snap(v: f64) -> f64 {
    const EPS: f64 = 1e-12;
    for target in [-1.0, 0.0, 1.0] {
        if (v - target).abs() < EPS {
            return target;
        }
    }
    v
}

/// Rotates each channel counter-clockwise by `degrees` about the image
/// center with bilinear interpolation; samples outside the source are zero.
pub fn rotate_bilinear(image: &[Real], shape: [usize; 3], degrees: f64) -> Vec<Real> {
    let [c, h, w] = shape;
    let theta = degrees.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0 as Real; image.len()];
    let at = |plane: &[Real], y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize] as f64
        }
    };
    for ch in 0..c {
        let plane = &image[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                let sy = cos * dy + sin * dx + cy;
                let sx = -sin * dy + cos * dx + cx;
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let v = (1.0 - fy) * ((1.0 - fx) * at(plane, y0, x0) + fx * at(plane, y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(plane, y0 + 1, x0) + fx * at(plane, y0 + 1, x0 + 1));
                dst[i * w + j] = v.clamp(0.0, 1.0) as Real;
            }
        }
    }
    out
}
