use std::collections::BTreeSet;

use sldm::descriptor::{Descriptor, OrganLabel};
use sldm::phantom::{generate_phantom_pair, PhantomSpec};
use sldm_nn::{pretrain_alignment, retrieval_accuracy, AlignmentConfig, AlignmentModel, AlignmentPair, ContrastiveConfig};

fn pairs(n: u64, seed0: u64) -> Vec<AlignmentPair> {
    let spec = PhantomSpec { size: 32, ..PhantomSpec::default() };
    (0..n)
        .map(|s| {
            let p = generate_phantom_pair(&spec, seed0 + s).unwrap();
            (p.ld_image, p.descriptor)
        })
        .collect()
}

fn relabeled(d: &Descriptor, from: OrganLabel, to: OrganLabel) -> Descriptor {
    let mut regions = d.regions.clone();
    regions.iter_mut().filter(|r| r.label == from).for_each(|r| r.label = to);
    let labels = d.labels.iter().map(|&l| if l == from { to } else { l }).collect();
    Descriptor::new(d.height, d.width, labels, regions, d.intensity_range).unwrap()
}

#[test]
fn encoders_emit_unit_deterministic_embeddings() {
    let model = AlignmentModel::new(AlignmentConfig::default(), 3).unwrap();
    for (img, d) in pairs(4, 0) {
        let a = model.encode_descriptor(&d).unwrap();
        assert_eq!(a, model.encode_descriptor(&d).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let b = model.encode_image(&img).unwrap();
        assert_eq!(b, model.encode_image(&img).unwrap());
        assert!((b.norm() - 1.0).abs() < 1e-6);
        assert_eq!(b.dim(), sldm_nn::semantic::EMBED_DIM);
    }
}

#[test]
fn pretraining_separates_classes() {
    let train = pairs(1024, 0);
    let held_out = pairs(16, 10_000);
    let classes: BTreeSet<u8> = held_out.iter().map(|p| p.1.class_key()).collect();
    assert!(classes.len() >= 3, "held-out set should cover several organ-label classes");
    let cfg = AlignmentConfig::default();
    let out = pretrain_alignment(&train, &cfg, 7).unwrap();
    assert!(out.warnings.is_empty());
    let c = &out.loss_curve;
    let head = c[..20].iter().sum::<f64>() / 20.0;
    let tail = c[c.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.7 * head, "loss {head:.3} -> {tail:.3}");

    let report = retrieval_accuracy(&out.model, &held_out).unwrap();
    assert!(report.class_top1 >= 0.9, "{report:?}");
    assert!(report.matched_over_mismatched >= 0.9, "{report:?}");

    let d = train.iter().map(|p| &p.1).find(|d| d.has(OrganLabel::Coronary)).unwrap();
    let e = relabeled(d, OrganLabel::Coronary, OrganLabel::Lung);
    let cos = out.model.encode_descriptor(d).unwrap().cosine(&out.model.encode_descriptor(&e).unwrap());
    assert!(cos < 1.0 - 1e-4, "cosine {cos}");

    let again = pretrain_alignment(&train, &AlignmentConfig { iterations: 5, ..cfg.clone() }, 7).unwrap();
    let twice = pretrain_alignment(&train, &AlignmentConfig { iterations: 5, ..cfg }, 7).unwrap();
    assert_eq!(again.model.params(), twice.model.params());
    assert_eq!(again.checkpoint, twice.checkpoint);
}

#[test]
fn strict_temperature_also_learns() {
    let cfg = AlignmentConfig { contrastive: ContrastiveConfig::strict(), iterations: 60, ..AlignmentConfig::default() };
    let out = pretrain_alignment(&pairs(32, 0), &cfg, 1).unwrap();
    let c = &out.loss_curve;
    assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(c[c.len() - 10..].iter().sum::<f64>() < c[..10].iter().sum::<f64>());
}

#[test]
fn degenerate_datasets() {
    let p = pairs(6, 0);
    assert!(pretrain_alignment(&p[..1], &AlignmentConfig::default(), 0).is_err());
    let same: Vec<AlignmentPair> = (0..4).map(|_| p[0].clone()).collect();
    assert!(pretrain_alignment(&same, &AlignmentConfig::default(), 0).is_err());

    let key = p[0].1.class_key();
    let one_class: Vec<AlignmentPair> = pairs(40, 0).into_iter().filter(|q| q.1.class_key() == key).take(4).collect();
    assert!(one_class.len() >= 2);
    let cfg = AlignmentConfig { iterations: 3, batch_size: 4, ..AlignmentConfig::default() };
    let out = pretrain_alignment(&one_class, &cfg, 0).unwrap();
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn checkpoint_roundtrip() {
    let model = AlignmentModel::new(AlignmentConfig::default(), 9).unwrap();
    let back = AlignmentModel::from_checkpoint(&model.to_checkpoint(0, 9, vec![], None)).unwrap();
    let (img, d) = pairs(1, 0).remove(0);
    assert_eq!(model.encode_image(&img).unwrap(), back.encode_image(&img).unwrap());
    assert_eq!(model.encode_descriptor(&d).unwrap(), back.encode_descriptor(&d).unwrap());
}
