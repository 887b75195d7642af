use flowstyle::flow::{
    flow_mask, load_flows, load_mask, reference_mask_to_sparse, reference_masks, save_flows, save_mask,
    FlowFieldSequence,
};
use flowstyle::tensor::{load_grid, save_grid, Dims4, Grid4};
use flowstyle::Error;

#[test]
fn grid_file_layout() {
    let g = Grid4::from_fn(Dims4::new(2, 1, 1, 3), |s, _, _, x| (s * 3 + x) as f32 - 0.5).unwrap();
    let bytes = g.to_bytes();
    assert_eq!(&bytes[..4], b"FVG4");
    let dims: Vec<u32> = bytes[4..20].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(dims, [2, 1, 1, 3]);
    assert_eq!(bytes.len(), 20 + 6 * 4);
    assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), -0.5);

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("g.fvg");
    save_grid(&g, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_grid(&path).unwrap(), g);
}

#[test]
fn flow_file_round_trip() {
    let f = FlowFieldSequence::from_fn(3, 2, 4, |k, y, x| (k as f32, y as f32 - x as f32), |k, _, x| {
        (-(k as f32), x as f32 * 0.25)
    })
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("f.fvfl");
    save_flows(&f, &path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"FVFL");
    let back = load_flows(&path).unwrap();
    assert_eq!(back.to_bytes(), f.to_bytes());
    assert_eq!(back.backward_at(1, 0, 3), (-1.0, 0.75));
}

#[test]
fn mask_file_round_trip() {
    let flows = FlowFieldSequence::uniform(4, 3, 3, 0.0, 1.0).unwrap();
    let m = flow_mask(&flows).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.fvm6");
    save_mask(&m, &path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"FVM6");
    assert_eq!(load_mask(&path).unwrap(), m);
}

#[test]
fn reference_mask_is_stored_on_the_diagonal() {
    let flows = FlowFieldSequence::uniform(5, 2, 6, 0.0, 1.0).unwrap();
    let refs = reference_masks(&flows, &[0, 4]).unwrap();
    let sparse = reference_mask_to_sparse(&refs, 5).unwrap();
    assert!(sparse.entries().iter().all(|e| e[0] == e[3] && e[1] == e[4] && e[2] == e[5]));
    // the first reference has nothing before it and stores no entries
    assert!(sparse.entries().iter().all(|e| e[0] == 4));
    // four one-pixel shifts leave columns 0..4 of frame 4 uncovered
    let novel: Vec<_> = sparse.entries().iter().map(|e| (e[1], e[2])).collect();
    let expect: Vec<_> = (0..2).flat_map(|y| (0..4).map(move |x| (y, x))).collect();
    assert_eq!(novel, expect);
}

#[test]
fn truncated_and_foreign_files_are_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("x.bin");
    std::fs::write(&path, b"FVM6\x00\x00\x00").unwrap();
    assert!(matches!(load_mask(&path), Err(Error::Format(_))));
    assert!(matches!(load_flows(&path), Err(Error::Format(_))));
    assert!(matches!(load_grid(&path), Err(Error::Format(_))));
    assert!(matches!(load_grid(tmp.path().join("absent.fvg")), Err(Error::Io { .. })));
}
