//! Samples and their conversion to network inputs.

use super::network::InputLayout;
use super::tensor::{Act, Real};
use super::PredictorError;
use crate::features::FeatureSet;
use crate::semantics::{SemanticMap, CONCEPT_NAMES};

/// One labeled sample: a semantic map per camera, the target location and
/// its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub maps: Vec<SemanticMap>,
    pub location: [f64; 3],
    pub beam_label: u16,
    /// One flag per configured horizon.
    pub blockage: Vec<bool>,
    pub frame: u32,
    pub user: u32,
}

fn check_features(features: &FeatureSet) -> Result<(), PredictorError> {
    if features.is_empty() {
        return Err(PredictorError::EmptyFeatures);
    }
    if !features.has_location() {
        return Err(PredictorError::MissingLocation);
    }
    Ok(())
}

/// Location and full-resolution masks of one sample, stacked in canonical
/// feature order, then camera order.
pub fn build_input(sample: &SampleRecord, features: &FeatureSet) -> Result<([f32; 3], Act<f32>), PredictorError> {
    check_features(features)?;
    let (loc, masks) = build_batch::<f32>(std::slice::from_ref(sample), &[0], features, 1)?;
    Ok(([loc.data[0], loc.data[1], loc.data[2]], masks))
}

/// Network layout for a feature set over samples shaped like `sample`.
pub fn layout_for(sample: &SampleRecord, features: &FeatureSet, pool: usize) -> Result<InputLayout, PredictorError> {
    check_features(features)?;
    let first = sample.maps.first().ok_or_else(|| PredictorError::Shape("sample has no camera maps".into()))?;
    if pool == 0 || first.height % pool != 0 || first.width % pool != 0 {
        return Err(PredictorError::Config(format!(
            "map size {}x{} is not divisible by the pooling factor {pool}",
            first.height, first.width
        )));
    }
    Ok(InputLayout {
        concepts: features.concepts().iter().map(|&c| CONCEPT_NAMES[c].to_string()).collect(),
        cameras: sample.maps.len(),
        height: first.height / pool,
        width: first.width / pool,
    })
}

/// Inputs for `indices`, with every mask average-pooled by `pool`.
pub fn build_batch<T: Real>(
    samples: &[SampleRecord],
    indices: &[usize],
    features: &FeatureSet,
    pool: usize,
) -> Result<(Act<T>, Act<T>), PredictorError> {
    check_features(features)?;
    let first = samples.get(*indices.first().ok_or(PredictorError::EmptySplit("batch"))?).expect("index in range");
    let layout = layout_for(first, features, pool)?;
    let concepts = features.concepts();
    let (ph, pw) = (layout.height, layout.width);
    let n = indices.len();
    let channels = layout.channels();
    let mut loc = Vec::with_capacity(n * 3);
    let mut masks = Act::zeros(n, channels, ph, pw);
    let scale = T::one() / T::from_usize(pool * pool).unwrap();
    for (bi, &si) in indices.iter().enumerate() {
        let s = &samples[si];
        if s.maps.len() != layout.cameras {
            return Err(PredictorError::Shape(format!("sample {si} has {} cameras", s.maps.len())));
        }
        loc.extend(s.location.iter().map(|&v| T::from_f64(v).unwrap()));
        let out = masks.sample_mut(bi);
        let mut ch = 0;
        for &c in &concepts {
            for map in &s.maps {
                if map.height != ph * pool || map.width != pw * pool {
                    return Err(PredictorError::Shape(format!("sample {si} map size differs")));
                }
                let plane = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
                for row in 0..map.height {
                    let src = &map.labels[row * map.width..(row + 1) * map.width];
                    let dst = &mut plane[(row / pool) * pw..(row / pool + 1) * pw];
                    for (col, &l) in src.iter().enumerate() {
                        if l as usize == c {
                            dst[col / pool] += scale;
                        }
                    }
                }
                ch += 1;
            }
        }
    }
    Ok((Act::matrix(n, 3, loc), masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureId;
    use crate::semantics::concept;

    fn sample() -> SampleRecord {
        let mut a = SemanticMap::filled(0, 4, 4, concept::GROUND);
        a.labels[0] = concept::VEHICLE;
        a.labels[5] = concept::VEHICLE;
        let mut b = SemanticMap::filled(1, 4, 4, concept::SIDEWALK);
        b.labels[15] = concept::VEHICLE;
        SampleRecord { maps: vec![a, b], location: [1.0, 2.0, 1.5], beam_label: 0, blockage: vec![false], frame: 0, user: 0 }
    }

    #[test]
    fn location_only_has_no_channels() {
        let (loc, m) = build_input(&sample(), &FeatureSet::location_only()).unwrap();
        assert_eq!(loc, [1.0, 2.0, 1.5]);
        assert_eq!(m.c, 0);
    }

    #[test]
    fn location_is_required() {
        let f = FeatureSet::new([FeatureId::Concept(7)]);
        assert!(matches!(build_input(&sample(), &f), Err(PredictorError::MissingLocation)));
        assert!(matches!(build_input(&sample(), &FeatureSet::default()), Err(PredictorError::EmptyFeatures)));
    }

    #[test]
    fn channels_stack_feature_then_camera() {
        let f = FeatureSet::new([FeatureId::Concept(concept::VEHICLE), FeatureId::Location, FeatureId::Concept(concept::SIDEWALK)]);
        let (_, m) = build_input(&sample(), &f).unwrap();
        assert_eq!(m.c, 4);
        let plane = |c: usize| m.sample(0)[c * 16..(c + 1) * 16].iter().sum::<f32>();
        // sidewalk cam0, sidewalk cam1, vehicle cam0, vehicle cam1
        assert_eq!([plane(0), plane(1), plane(2), plane(3)], [0.0, 15.0, 2.0, 1.0]);
    }

    #[test]
    fn pooling_averages_blocks() {
        let f = FeatureSet::new([FeatureId::Location, FeatureId::Concept(concept::VEHICLE)]);
        let (_, m) = build_batch::<f64>(&[sample()], &[0], &f, 2).unwrap();
        assert_eq!((m.h, m.w), (2, 2));
        assert_eq!(&m.sample(0)[..4], &[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(&m.sample(0)[4..], &[0.0, 0.0, 0.0, 0.25]);
        assert!(build_batch::<f64>(&[sample()], &[0], &f, 3).is_err());
    }
}
