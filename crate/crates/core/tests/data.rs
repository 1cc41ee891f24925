use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use saf_lab::data::{
    batch_iterator, check_label_range, gen_gaussian_blobs, gen_two_moons, load_csv, parse_csv, save_csv, Domain,
    DomainSpec, Generator,
};
use saf_lab::LabRng;

/// Homogeneous `T · R · S`, built independently of the library.
fn affine(spec: &DomainSpec) -> Matrix3<f64> {
    let th = spec.rotation_deg.to_radians();
    let s = Matrix3::new(spec.scale, 0.0, 0.0, 0.0, spec.scale, 0.0, 0.0, 0.0, 1.0);
    let r = Matrix3::new(th.cos(), -th.sin(), 0.0, th.sin(), th.cos(), 0.0, 0.0, 0.0, 1.0);
    let t = Matrix3::new(1.0, 0.0, spec.translation[0], 0.0, 1.0, spec.translation[1], 0.0, 0.0, 1.0);
    t * r * s
}

fn spec_strategy() -> impl Strategy<Value = DomainSpec> {
    (-720.0f64..720.0, -5.0f64..5.0, -5.0f64..5.0, 0.1f64..4.0, 0u64..1000, 2usize..60).prop_map(
        |(rotation_deg, tx, ty, scale, seed, n_samples)| DomainSpec {
            rotation_deg,
            translation: [tx, ty],
            scale,
            seed,
            n_samples,
            ..DomainSpec::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn transform_is_scale_then_rotate_then_translate(spec in spec_strategy(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let want = affine(&spec) * Vector3::new(x, y, 1.0);
        let got = spec.transform([x, y]);
        prop_assert!((got[0] - want[0]).abs() <= 1e-9 && (got[1] - want[1]).abs() <= 1e-9);
    }

    #[test]
    fn generated_moons_are_the_canonical_set_mapped_affinely(spec in spec_strategy()) {
        let canonical = gen_two_moons(&DomainSpec { rotation_deg: 0.0, translation: [0.0, 0.0], scale: 1.0, ..spec.clone() }).unwrap();
        let shifted = gen_two_moons(&spec).unwrap();
        let m = affine(&spec);
        for r in 0..canonical.len() {
            let want = m * Vector3::new(canonical.features.get(r, 0), canonical.features.get(r, 1), 1.0);
            prop_assert!((shifted.features.get(r, 0) - want[0]).abs() <= 1e-9);
            prop_assert!((shifted.features.get(r, 1) - want[1]).abs() <= 1e-9);
        }
        prop_assert_eq!(&canonical.labels, &shifted.labels);
        let ones = shifted.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count();
        prop_assert!((2 * ones as i64 - spec.n_samples as i64).abs() <= 1);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(spec in spec_strategy(), labelled in any::<bool>()) {
        let mut b = gen_two_moons(&spec).unwrap();
        if !labelled {
            b = b.without_labels();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&b, &path).unwrap();
        let back = load_csv(&path, labelled, Domain::Source).unwrap();
        prop_assert_eq!(back, b);
    }
}

#[test]
fn blob_classes_are_balanced_and_noiseless_blobs_collapse() {
    let centers = [[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0], [4.0, -2.0]];
    for n in [8, 9, 10, 11, 101] {
        let spec = DomainSpec {
            generator: Generator::GaussianBlobs,
            n_samples: n,
            noise_sd: 0.0,
            rotation_deg: 30.0,
            translation: [1.0, -1.0],
            scale: 2.0,
            seed: 1,
        };
        let b = gen_gaussian_blobs(&spec, &centers).unwrap();
        let labels = b.labels.as_ref().unwrap();
        let counts: Vec<usize> = (0..4).map(|k| labels.iter().filter(|&&l| l == k).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
        for (r, &l) in labels.iter().enumerate() {
            let c = affine(&spec) * Vector3::new(centers[l][0], centers[l][1], 1.0);
            assert!((b.features.get(r, 0) - c[0]).abs() < 1e-12 && (b.features.get(r, 1) - c[1]).abs() < 1e-12);
        }
    }
    let dup = gen_gaussian_blobs(&DomainSpec::default(), &[[1.0, 1.0], [1.0, 1.0]]);
    assert!(matches!(dup, Err(saf_lab::Error::Config(_))));
}

#[test]
fn malformed_files_name_the_row() {
    let cases = [
        ("f0,f1,label\n1,2,0\n3,4,1\n5,6\n", "row 3"),
        ("f0,f1,label\n1,2,0\n3,x,1\n", "row 2"),
        ("f0,f1,label\n1,2,0.5\n", "row 1"),
    ];
    for (text, needle) in cases {
        let err = parse_csv(text, true, Domain::Source).unwrap_err().to_string();
        assert!(err.contains(needle), "{err:?} should mention {needle}");
    }
    let b = parse_csv("f0,f1,label\n1,2,0\n3,4,7\n", true, Domain::Target).unwrap();
    let err = check_label_range(&b, 2).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
    assert!(load_csv(std::path::Path::new("/nonexistent/x.csv"), true, Domain::Source).is_err());
}

#[test]
fn label_column_is_a_feature_when_unlabelled() {
    let b = parse_csv("f0,f1,label\n1,2,0\n3,4,1\n", false, Domain::Target).unwrap();
    assert_eq!(b.width(), 3);
    assert!(b.labels.is_none());
    assert_eq!(b.domain_tags, vec![Domain::Target; 2]);
}

#[test]
fn epochs_partition_and_repeat_with_the_seed() {
    let data = gen_two_moons(&DomainSpec { n_samples: 37, ..DomainSpec::default() }).unwrap();
    for size in [1, 5, 36, 37, 100] {
        let a = batch_iterator(&data, size, true, &mut LabRng::seed_from_u64(3)).unwrap();
        let b = batch_iterator(&data, size, true, &mut LabRng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|x| x.len()).sum::<usize>(), 37);
        let mut rows: Vec<Vec<u64>> = a
            .iter()
            .flat_map(|x| (0..x.len()).map(|r| x.features.row(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect();
        let mut want: Vec<Vec<u64>> = (0..37).map(|r| data.features.row(r).iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        want.sort();
        assert_eq!(rows, want);
    }
    assert!(batch_iterator(&data, 0, true, &mut LabRng::seed_from_u64(0)).is_err());
}
