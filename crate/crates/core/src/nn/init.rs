use ndarray::Array2;
use rand::Rng;

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform `rows x cols` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Array2<f64> {
    let bound = glorot_bound(fan_in, fan_out);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}
