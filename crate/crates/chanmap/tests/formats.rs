mod common;

use std::path::Path;

use chanmap::formats::{
    decode_cirs, encode_cirs, read_mask_csv, read_sweep_csv, write_log_csv, write_mask_csv, write_sweep_csv,
    Checkpoint, GraphFile, MapFile, SweepRow,
};
use chanmap::pipeline::{self, Artifacts};
use chanmap::Error;
use common::tiny_config;

fn artifacts() -> (tempfile::TempDir, Artifacts) {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts::new(dir.path());
    let cfg = tiny_config();
    pipeline::stage_simulate(&cfg, &art).unwrap();
    pipeline::stage_mask(&cfg, &art).unwrap();
    pipeline::stage_build_graph(&cfg, None, &art).unwrap();
    pipeline::stage_train(&cfg, &art).unwrap();
    (dir, art)
}

fn format_err(r: Result<impl std::fmt::Debug, Error>) -> String {
    match r {
        Err(Error::Format { msg, .. }) => msg,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn map_round_trip_is_byte_exact() {
    let (map, cirs) = pipeline::simulate(&tiny_config(), 4).unwrap();
    let bytes = map.encode().unwrap();
    assert_eq!(&bytes[..8], b"CHANMAP\0");
    let back = MapFile::decode(&bytes, Path::new("m")).unwrap();
    assert_eq!(back, map);
    assert_eq!(back.encode().unwrap(), bytes);
    assert_eq!(back.meta.grid().unwrap().len(), 120);

    let cb = encode_cirs(&cirs);
    assert_eq!(decode_cirs(&cb, Path::new("c")).unwrap(), cirs);
}

#[test]
fn corrupt_headers_and_truncation_are_rejected() {
    let (map, _) = pipeline::simulate(&tiny_config(), 4).unwrap();
    let bytes = map.encode().unwrap();
    let p = Path::new("m");
    assert!(format_err(MapFile::decode(&bytes[..bytes.len() - 3], p)).contains("truncated"));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(format_err(MapFile::decode(&extra, p)).contains("trailing"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(format_err(MapFile::decode(&magic, p)).contains("not a"));
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(format_err(MapFile::decode(&version, p)).contains("version"));
    let mut swapped = bytes.clone();
    swapped[12..16].reverse();
    assert!(format_err(MapFile::decode(&swapped, p)).contains("byte-swapped"));
    // A header claiming a huge grid must fail before allocating it.
    let mut huge = bytes.clone();
    huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(MapFile::decode(&huge, p).is_err());
    assert!(decode_cirs(&bytes, p).is_err());
}

#[test]
fn graph_file_round_trip_keeps_edges_and_mask() {
    let (_dir, art) = artifacts();
    let g = GraphFile::read(&art.graph).unwrap();
    let bytes = g.encode().unwrap();
    let back = GraphFile::decode(&bytes, Path::new("g")).unwrap();
    assert_eq!(back.observed, g.observed);
    assert_eq!(back.graph.edges(), g.graph.edges());
    assert_eq!(back.graph.coords(), g.graph.coords());
    assert_eq!(back.graph.tau_w(), g.graph.tau_w());
    assert_eq!(back.encode().unwrap(), bytes);
    assert_eq!(g.observed, read_mask_csv(&art.mask).unwrap());

    let edges = std::fs::read_to_string(&art.edges).unwrap();
    assert!(edges.starts_with("u,v,dx,dy,d_euc,w_dist,los,weight\n"));
    assert_eq!(edges.lines().count(), g.graph.n_edges() + 1);
}

#[test]
fn checkpoint_round_trip_and_checksum() {
    let (_dir, art) = artifacts();
    let bytes = std::fs::read(&art.checkpoint).unwrap();
    let ck = Checkpoint::decode(&bytes, Path::new("c")).unwrap();
    assert_eq!(ck.encode().unwrap(), bytes);
    assert_eq!(ck.manifest.dims.hidden, 8);
    assert_eq!(ck.manifest.train, tiny_config().train);

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(format_err(Checkpoint::decode(&flipped, Path::new("c"))).contains("checksum"));
    assert!(Checkpoint::decode(&bytes[..20], Path::new("c")).is_err());

    let log = std::fs::read_to_string(&art.train_log).unwrap();
    assert!(log.starts_with("epoch,L_r,L_s,L_p,total,val_nmse,lr,seconds\n"));
    assert_eq!(log.lines().count(), ck.manifest.epochs_run + 1);
}

#[test]
fn csv_tables_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = tiny_config().grid.unwrap().build().unwrap();
    let mask: Vec<bool> = (0..grid.len()).map(|k| k % 7 == 0).collect();
    let p = dir.path().join("mask.csv");
    write_mask_csv(&p, &grid, &mask).unwrap();
    assert_eq!(read_mask_csv(&p).unwrap(), mask);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("node,row,col,observed\n0,0,0,1\n"));

    std::fs::write(&p, "node,row,col,observed\n1,0,0,1\n").unwrap();
    assert!(read_mask_csv(&p).is_err());

    let rows = vec![
        SweepRow { density: 25, variant: "full".into(), seed: 1, nmse: 0.5, train_s: 1.0, infer_s: 0.1 },
        SweepRow { density: 25, variant: "idw-baseline".into(), seed: 1, nmse: 0.25, train_s: 0.0, infer_s: 0.0 },
    ];
    let s = dir.path().join("sweep.csv");
    write_sweep_csv(&s, &rows).unwrap();
    assert_eq!(read_sweep_csv(&s).unwrap(), rows);
    assert!(std::fs::read_to_string(&s).unwrap().starts_with("density,variant,seed,nmse,train_s,infer_s\n"));

    let l = dir.path().join("log.csv");
    write_log_csv(&l, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&l).unwrap(), "epoch,L_r,L_s,L_p,total,val_nmse,lr,seconds\n");
}
