//! Binary model checkpoints with the optimizer state needed to resume.
//!
//! Layout, all little-endian: `u64` extractor width count and widths, `u64`
//! extractor output-rectifier flag, the same for the head topology, `u64` K and
//! h, every parameter tensor as `f64` in declaration order (extractor layers,
//! then each head; per layer weights then bias), then the optimizer: `u64`
//! step, `f64` learning rate, β1, β2, ε, first moments, second moments.
//!
//! Projections and attributes are stored separately and supplied on load.

use std::io::{Read, Write};

use crate::adam::{AdamConfig, AdamState, Parameters};
use crate::binio::{write_f64s, write_u64, Reader};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::label_embedding::{AttributeMatrix, ProjectionSet};
use crate::mlp::{Mlp, MlpSpec};

fn write_spec<W: Write>(w: &mut W, spec: &MlpSpec) -> std::io::Result<()> {
    write_u64(w, spec.widths.len() as u64)?;
    for &x in &spec.widths {
        write_u64(w, x as u64)?;
    }
    write_u64(w, spec.relu_last as u64)
}

fn read_spec<R: Read>(r: &mut Reader<'_, R>) -> Result<MlpSpec> {
    let n = r.count("layer count")?;
    let widths = (0..n).map(|_| r.count("layer width")).collect::<Result<Vec<_>>>()?;
    let relu_last = match r.u64()? {
        0 => false,
        1 => true,
        v => return Err(Error::Data(format!("bad rectifier flag {v}"))),
    };
    MlpSpec::new(widths, relu_last).map_err(|e| Error::Data(e.to_string()))
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &EnsembleModel, optimizer: &AdamState) -> std::io::Result<()> {
    write_spec(w, &model.extractor().spec())?;
    write_spec(w, &model.heads()[0].spec())?;
    write_u64(w, model.k() as u64)?;
    write_u64(w, model.projections().h() as u64)?;
    for t in model.tensors() {
        write_f64s(w, t)?;
    }
    write_u64(w, optimizer.step)?;
    let c = optimizer.config;
    write_f64s(w, &[c.learning_rate, c.beta1, c.beta2, c.epsilon])?;
    for t in optimizer.first_moment.iter().chain(&optimizer.second_moment) {
        write_f64s(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R, projections: ProjectionSet, attributes: AttributeMatrix) -> Result<(EnsembleModel, AdamState)> {
    let mut rd = Reader::new(r);
    let ext_spec = read_spec(&mut rd)?;
    let head_spec = read_spec(&mut rd)?;
    let k = rd.count("K")?;
    let h = rd.count("h")?;
    if k != projections.k() || h != projections.h() {
        return Err(Error::Shape(format!(
            "checkpoint has K={k}, h={h}; projections have K={}, h={}",
            projections.k(),
            projections.h()
        )));
    }
    let extractor = Mlp::zeros(&ext_spec);
    let heads = vec![Mlp::zeros(&head_spec); k];
    let mut model = EnsembleModel::from_parts(extractor, heads, projections, attributes)?;
    for t in model.tensors_mut() {
        let vals = rd.f64s(t.len())?;
        t.copy_from_slice(&vals);
    }
    if model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("checkpoint holds non-finite parameters".into()));
    }
    let step = rd.u64()?;
    let hp = rd.f64s(4)?;
    let config = AdamConfig { learning_rate: hp[0], beta1: hp[1], beta2: hp[2], epsilon: hp[3] };
    let mut optimizer = AdamState::new(&model, config);
    optimizer.step = step;
    for slot in optimizer.first_moment.iter_mut().chain(optimizer.second_moment.iter_mut()) {
        let vals = rd.f64s(slot.len())?;
        slot.copy_from_slice(&vals);
    }
    rd.expect_end()?;
    Ok((model, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::adam_step;
    use crate::label_embedding::{build_projection_set, ClassSplit};
    use crate::linalg::Matrix;

    #[test]
    fn checkpoint_round_trip_resumes_training() {
        let attrs = AttributeMatrix::from_columns(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![0.5, -1.0, 0.0],
        ])
        .unwrap();
        let split = ClassSplit::leading_seen(2, 4).unwrap();
        let proj = build_projection_set(&attrs, &split, 2, 2, 0).unwrap();
        let mut model =
            EnsembleModel::new(&MlpSpec::new(vec![3, 4], true).unwrap(), &[5], false, proj.clone(), attrs.clone(), 1).unwrap();
        let mut opt = AdamState::new(&model, AdamConfig::default());
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0]]).unwrap();
        let (_, g) = model.backward(&x, &[0, 1]).unwrap();
        adam_step(&mut model, &g, &mut opt).unwrap();

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, &opt).unwrap();
        let (m2, o2) = read_checkpoint(&mut buf.as_slice(), proj.clone(), attrs.clone()).unwrap();
        assert_eq!(m2, model);
        assert_eq!(o2, opt);

        buf.truncate(buf.len() - 1);
        assert!(read_checkpoint(&mut buf.as_slice(), proj, attrs).is_err());
    }
}
