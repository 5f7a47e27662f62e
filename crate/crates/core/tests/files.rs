use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use expograph::spectral::full_spectrum;
use expograph::synthdata::{generate_logistic, global_loss, Heterogeneity, NodeDataset, REFERENCE_TOL};
use expograph::topology::{build_static_exponential, validate_doubly_stochastic};
use expograph::WeightMatrix;

#[test]
fn weight_matrix_csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    let w = build_static_exponential(12).unwrap();
    let mut f = BufWriter::new(File::create(&path).unwrap());
    w.write_csv(&mut f).unwrap();
    f.flush().unwrap();
    drop(f);
    let back = WeightMatrix::read_csv(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back.entries(), w.entries());
    assert!(validate_doubly_stochastic(&back, 1e-12));
    assert_eq!(full_spectrum(&back).unwrap().rho, full_spectrum(&w).unwrap().rho);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("12"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.bin");
    let ds = generate_logistic(3, 40, 5, Heterogeneity::IidIndependent, 8)
        .unwrap()
        .with_reference(REFERENCE_TOL)
        .unwrap();
    ds.write_to(BufWriter::new(File::create(&path).unwrap())).unwrap();
    let back = NodeDataset::read_from(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back, ds);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..16], expograph::synthdata::MAGIC);
    let x = back.x_star.clone().unwrap();
    assert_eq!(global_loss(&back, &x), global_loss(&ds, &x));
}

#[test]
fn truncated_dataset_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.bin");
    let ds = generate_logistic(2, 10, 3, Heterogeneity::NonIid, 1).unwrap();
    let mut buf = Vec::new();
    ds.write_to(&mut buf).unwrap();
    std::fs::write(&path, &buf[..buf.len() - 9]).unwrap();
    assert!(NodeDataset::read_from(File::open(&path).unwrap()).is_err());
}
