use nae::formats::{annotation, checkpoint, field, pgm, AnnotationFile, Checkpoint};
use nae_core::nn::{predict_field, ModelConfig, ModelParams};
use nae_core::rng::{substream, Purpose};
use nae_core::{ImageGrid, Point, PointSet, VectorField};
use proptest::prelude::*;
use rand::Rng;

fn annotation_file() -> impl Strategy<Value = AnnotationFile> {
    (1usize..2000, 1usize..2000).prop_flat_map(|(w, h)| {
        let point = (0.0..w as f64, 0.0..h as f64).prop_map(|(x, y)| Point::new(x, y));
        (
            prop::collection::vec(point, 0..10_000),
            "[a-z_/]{1,12}\\.pgm",
        )
            .prop_map(move |(pts, image)| AnnotationFile {
                image,
                points: PointSet::new(w, h, pts).unwrap(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn annotations_round_trip_exactly(ann in annotation_file()) {
        let text = annotation::to_string(&ann);
        prop_assert_eq!(annotation::from_str(&text).unwrap(), ann);
    }
}

#[test]
fn annotation_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/a.ann.json");
    let ann = AnnotationFile {
        image: "a.pgm".into(),
        points: PointSet::new(9, 9, vec![Point::new(0.1 + 0.2, 8.999999999999)]).unwrap(),
    };
    annotation::write(&path, &ann).unwrap();
    assert_eq!(annotation::read(&path).unwrap(), ann);
}

#[test]
fn checkpoints_reproduce_the_forward_pass_bit_for_bit() {
    let config = ModelConfig::default();
    let mut params =
        ModelParams::<f32>::init(&config, &mut substream(3, Purpose::Init, &[])).unwrap();
    // A non-zero head so the comparison is not trivially all zeros.
    let mut rng = substream(3, Purpose::Init, &[1]);
    for p in &mut params.params {
        for v in &mut p.data {
            *v += rng.random_range(-0.01f32..0.01);
        }
    }
    let ckpt = Checkpoint {
        config: config.clone(),
        params,
    };
    let decoded = checkpoint::decode(&checkpoint::encode(&ckpt)).unwrap();
    assert_eq!(decoded, ckpt);
    let image = ImageGrid::new(40, 24, (0..960).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
    let a = predict_field(&config, &ckpt.params, &image).unwrap();
    let b = predict_field(&decoded.config, &decoded.params, &image).unwrap();
    assert!(a.dx().iter().any(|v| *v != 0.0));
    assert_eq!(
        a.dx().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.dx().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.dy().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.dy().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn pgm_and_field_round_trips() {
    let image = ImageGrid::new(2, 2, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]).unwrap();
    let bytes = pgm::encode(&image);
    assert!(bytes.ends_with(&[0, 255, 128, 64]));
    assert_eq!(pgm::decode(&bytes).unwrap(), image);
    let f = VectorField::new(3, 1, vec![0.5, -1.0, 2.25], vec![0.0, 1e-3, -7.0]).unwrap();
    assert_eq!(field::decode(&field::encode(&f)).unwrap(), f);
}
