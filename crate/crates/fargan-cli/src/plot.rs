//! Scatter SVG output: real samples as one CSS class, generated samples as
//! another, viewBox fitted to the data with a 10% margin. Styling lives in
//! classes so downstream checks can assert structure instead of pixels.

use fargan_core::Tensor;

fn bounds(points: &[&Tensor]) -> (f64, f64, f64, f64) {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for t in points {
        for i in 0..t.rows() {
            let r = t.row(i);
            if r[0].is_finite() && r[1].is_finite() {
                min_x = min_x.min(r[0]);
                max_x = max_x.max(r[0]);
                min_y = min_y.min(r[1]);
                max_y = max_y.max(r[1]);
            }
        }
    }
    if !min_x.is_finite() {
        (-1.0, 1.0, -1.0, 1.0)
    } else {
        (min_x, max_x, min_y, max_y)
    }
}

/// One circle element per point; reals carry class "real", fakes "fake".
pub fn scatter_svg(reals: &Tensor, fakes: &Tensor) -> String {
    let (min_x, max_x, min_y, max_y) = bounds(&[reals, fakes]);
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let margin_x = 0.1 * span_x;
    let margin_y = 0.1 * span_y;
    let vb_x = min_x - margin_x;
    let vb_y = min_y - margin_y;
    let vb_w = span_x + 2.0 * margin_x;
    let vb_h = span_y + 2.0 * margin_y;
    let radius = 0.006 * vb_w.max(vb_h);
    // SVG y grows downward; flip so the plot reads like the plane.
    let flip = |y: f64| vb_y + vb_h - (y - min_y + margin_y);

    let mut svg = String::with_capacity(128 + 90 * (reals.rows() + fakes.rows()));
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{vb_x} {vb_y} {vb_w} {vb_h}\">\n"
    ));
    svg.push_str(
        "<style>.real{fill:#2b6cb0;fill-opacity:0.7;}.fake{fill:#c53030;fill-opacity:0.7;}</style>\n",
    );
    for (tensor, class) in [(reals, "real"), (fakes, "fake")] {
        for i in 0..tensor.rows() {
            let r = tensor.row(i);
            svg.push_str(&format!(
                "<circle class=\"{class}\" cx=\"{}\" cy=\"{}\" r=\"{radius}\"/>\n",
                r[0],
                flip(r[1])
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
