use std::collections::BTreeSet;

use alpr_core::dataset::{
    generate_synthetic, split_dataset, write_annotation, parse_annotation, Dataset, Split, SplitFractions, SynthMix,
    SynthOptions, SPLIT_NAMES,
};
use alpr_core::VehicleType;

#[test]
fn tree_and_split_round_trip() {
    let tracks = generate_synthetic(3, 20, &SynthOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset { tracks };
    ds.write(dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded, ds);

    let split = split_dataset(&ds.tracks, SplitFractions::default(), 3).unwrap();
    let split_dir = dir.path().join("splits");
    split.write(&split_dir).unwrap();
    let mut seen = BTreeSet::new();
    for name in SPLIT_NAMES {
        let ids = Split::read_part(&split_dir, name).unwrap();
        assert_eq!(ids, split.part(name).unwrap());
        for id in ids {
            assert!(seen.insert(id), "track in two parts");
        }
    }
    assert_eq!(seen.len(), 20);
}

#[test]
fn annotation_text_round_trip() {
    let opts = SynthOptions {
        mix: SynthMix {
            car_gray: 0.0,
            car_red: 0.0,
            moto_gray: 1.0,
        },
        ..SynthOptions::default()
    };
    let tracks = generate_synthetic(11, 3, &opts).unwrap();
    for t in &tracks {
        assert_eq!(t.vtype(), Some(VehicleType::Motorcycle));
        for ann in &t.frames {
            assert_eq!(&parse_annotation(&write_annotation(ann)).unwrap(), ann);
        }
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = generate_synthetic(5, 12, &SynthOptions::default()).unwrap();
    let b = generate_synthetic(5, 12, &SynthOptions::default()).unwrap();
    let c = generate_synthetic(6, 12, &SynthOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        split_dataset(&a, SplitFractions::default(), 1).unwrap(),
        split_dataset(&b, SplitFractions::default(), 1).unwrap()
    );
}
