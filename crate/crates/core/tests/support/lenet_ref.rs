//! Straightforward LeNet-5 integer inference, written without reference to
//! the library's im2col path.

use imac_core::nn::tensor_file::TensorFile;

/// Symmetric quantization with ties away from zero.
fn quant(x: &[f32], levels: f64) -> (Vec<i64>, f64) {
    let m = x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let s = if m == 0.0 { 1.0 } else { m / levels };
    (
        x.iter().map(|&v| (v as f64 / s).round() as i64).collect(),
        s,
    )
}

struct RefLayer<'a> {
    w: Vec<i64>,
    sw: f64,
    b: &'a [f32],
}

fn ref_layer<'a>(t: &'a TensorFile, name: &str) -> RefLayer<'a> {
    let (w, sw) = quant(&t.get(&format!("{name}.weight")).unwrap().data, 15.0);
    RefLayer {
        w,
        sw,
        b: &t.get(&format!("{name}.bias")).unwrap().data,
    }
}

/// Direct convolution over (c, h, w) with zero padding, stride 1.
fn conv(
    l: &RefLayer,
    x: &[f32],
    c: usize,
    hw: usize,
    n: usize,
    k: usize,
    pad: usize,
) -> (Vec<f32>, Vec<i64>) {
    let (q, sa) = quant(x, 15.0);
    let o = hw + 2 * pad - k + 1;
    let mut accs = Vec::new();
    let mut out = Vec::new();
    for m in 0..n {
        for oy in 0..o {
            for ox in 0..o {
                let mut acc = 0i64;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = (oy + ky, ox + kx);
                            if iy < pad || ix < pad || iy - pad >= hw || ix - pad >= hw {
                                continue;
                            }
                            let v = q[ci * hw * hw + (iy - pad) * hw + (ix - pad)];
                            acc += l.w[((m * c + ci) * k + ky) * k + kx] * v;
                        }
                    }
                }
                accs.push(acc);
                out.push((acc as f64 * (l.sw * sa) + l.b[m] as f64) as f32);
            }
        }
    }
    (out, accs)
}

fn fc(l: &RefLayer, x: &[f32], n: usize) -> (Vec<f32>, Vec<i64>) {
    let (q, sa) = quant(x, 15.0);
    let mut accs = Vec::new();
    let mut out = Vec::new();
    for m in 0..n {
        let acc: i64 = q
            .iter()
            .enumerate()
            .map(|(i, v)| l.w[m * q.len() + i] * v)
            .sum();
        accs.push(acc);
        out.push((acc as f64 * (l.sw * sa) + l.b[m] as f64) as f32);
    }
    (out, accs)
}

fn relu(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn pool(x: &[f32], c: usize, hw: usize) -> Vec<f32> {
    let o = hw / 2;
    let mut out = Vec::new();
    for ci in 0..c {
        for y in 0..o {
            for xx in 0..o {
                let at = |dy, dx| x[ci * hw * hw + (2 * y + dy) * hw + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

pub fn reference(t: &TensorFile, image: &[f32]) -> (Vec<f32>, Vec<Vec<i64>>) {
    let (mut x, a1) = conv(&ref_layer(t, "conv1"), image, 1, 28, 6, 5, 2);
    relu(&mut x);
    let x = pool(&x, 6, 28);
    let (mut x, a2) = conv(&ref_layer(t, "conv2"), &x, 6, 14, 16, 5, 0);
    relu(&mut x);
    let x = pool(&x, 16, 10);
    let (mut x, a3) = fc(&ref_layer(t, "fc1"), &x, 120);
    relu(&mut x);
    let (mut x, a4) = fc(&ref_layer(t, "fc2"), &x, 84);
    relu(&mut x);
    let (x, a5) = fc(&ref_layer(t, "fc3"), &x, 10);
    (x, vec![a1, a2, a3, a4, a5])
}
