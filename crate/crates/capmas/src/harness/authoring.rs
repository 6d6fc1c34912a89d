//! Optional authoring support: generate the perturbed caption variants
//! for meta-evaluation from a clean caption via a strong vision model.
//! Evaluation itself always runs from pre-built variant files; this
//! exists to produce those files.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatExchange, Gateway, ImageRef, ModelEndpoint};
use crate::harness::{CaptionVariantSet, HarnessError};

pub const OBJECT_VARIANT_PROMPT: &str = "You will be given an image and its caption. Add to the \
caption one sentence describing an object that would plausibly appear in such a scene but is NOT \
present in the image. Keep the rest of the caption unchanged. Output only the modified caption.\n\n\
Caption: {caption}";

pub const ATTRIBUTION_VARIANT_PROMPT: &str = "You will be given an image and its caption. Change \
one or two object attributes in the caption (such as colors, sizes, or materials) so that they \
conflict with the image. Keep everything else unchanged. Output only the modified caption.\n\n\
Caption: {caption}";

pub const RELATION_VARIANT_PROMPT: &str = "You will be given an image and its caption. Alter one \
relationship between objects in the caption (such as a spatial arrangement or an interaction) so \
that it conflicts with the image. Keep everything else unchanged. Output only the modified \
caption.\n\nCaption: {caption}";

/// Input record for variant authoring: the clean caption plus the
/// reference that will accompany the produced set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanCaption {
    pub image: ImageRef,
    pub clean: String,
    pub reference: String,
}

/// Generate the object/attribution/relation variants of one clean
/// caption. Each variant comes from a separate generator call that sees
/// the image and the clean caption.
pub fn author_variant_set(
    gateway: &Gateway,
    generator: &ModelEndpoint,
    input: &CleanCaption,
) -> Result<CaptionVariantSet, HarnessError> {
    let mut variants = Vec::with_capacity(3);
    for template in [
        OBJECT_VARIANT_PROMPT,
        ATTRIBUTION_VARIANT_PROMPT,
        RELATION_VARIANT_PROMPT,
    ] {
        let prompt = template.replace("{caption}", &input.clean);
        let reply = gateway.complete(
            generator,
            &ChatExchange::user_with_image(&prompt, input.image.clone()),
        )?;
        if reply.text.trim().is_empty() {
            return Err(HarnessError::Dataset(
                "variant generator returned empty output".into(),
            ));
        }
        variants.push(reply.text);
    }
    let set = CaptionVariantSet {
        image: input.image.clone(),
        clean: input.clean.clone(),
        object_variant: variants[0].clone(),
        attribution_variant: variants[1].clone(),
        relation_variant: variants[2].clone(),
        reference: input.reference.clone(),
    };
    set.validate().map_err(HarnessError::Dataset)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};

    #[test]
    fn authoring_builds_a_valid_variant_set() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "generator",
                MockScript {
                    rules: vec![
                        MockRule::substring("is NOT", "clean caption. A red ball is nearby."),
                        MockRule::substring("attributes", "metal clean caption"),
                        MockRule::substring("relationship", "clean caption upside down"),
                    ],
                    default_response: None,
                },
            )
            .unwrap();
        let generator = ModelEndpoint::mock("generator");
        let input = CleanCaption {
            image: ImageRef::from_bytes(b"img"),
            clean: "clean caption".into(),
            reference: "reference".into(),
        };
        let set = author_variant_set(&gateway, &generator, &input).unwrap();
        assert_eq!(set.clean, "clean caption");
        assert!(set.object_variant.contains("red ball"));
        assert!(set.attribution_variant.contains("metal"));
        assert!(set.relation_variant.contains("upside down"));
        assert_eq!(set.reference, "reference");
    }
}
