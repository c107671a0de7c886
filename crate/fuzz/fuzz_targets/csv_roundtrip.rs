#![no_main]

use eiv_tls::io::{parse_csv, write_csv};
use libfuzzer_sys::fuzz_target;
use nalgebra::DMatrix;

fuzz_target!(|input: (u8, Vec<f64>)| {
    let (cols, values) = input;
    let cols = (cols as usize % 6) + 1;
    let values: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    let rows = values.len() / cols;
    if rows == 0 {
        return;
    }
    let m = DMatrix::from_row_slice(rows, cols, &values[..rows * cols]);
    let back = parse_csv(&write_csv(&m), false).unwrap();
    assert_eq!(back, m);
});
