use std::io::Cursor;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// An attached image, identified by a hash of its dimensions and pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatImage {
    pub image: RgbImage,
    hash: String,
}

impl ChatImage {
    pub fn new(image: RgbImage) -> Self {
        let mut h = Sha256::new();
        h.update(image.width().to_le_bytes());
        h.update(image.height().to_le_bytes());
        h.update(image.as_raw());
        let hash = hex::encode(h.finalize());
        Self { image, hash }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.image
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::InvalidArgument(format!("png encoding failed: {e}")))?;
        Ok(buf.into_inner())
    }

    pub fn to_base64_png(&self) -> Result<String> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.to_png()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub images: Vec<ChatImage>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            images: Vec::new(),
        }
    }
}

/// A rendered template: the messages plus the id they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub template_id: String,
    pub messages: Vec<ChatMessage>,
}

impl Prompt {
    /// Order-sensitive hash over the template id, roles, texts and image hashes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.template_id.as_bytes());
        for m in &self.messages {
            field(m.role.as_str().as_bytes());
            field(m.text.as_bytes());
            for img in &m.images {
                field(img.hash().as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(|m| m.images.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: u8) -> ChatImage {
        ChatImage::new(RgbImage::from_pixel(4, 3, image::Rgb([v, 0, 0])))
    }

    #[test]
    fn hash_depends_on_pixels_and_shape() {
        assert_eq!(img(1).hash(), img(1).hash());
        assert_ne!(img(1).hash(), img(2).hash());
        let tall = ChatImage::new(RgbImage::from_pixel(3, 4, image::Rgb([1, 0, 0])));
        assert_ne!(img(1).hash(), tall.hash());
    }

    #[test]
    fn digest_is_order_sensitive() {
        let mut a = ChatMessage::new(Role::User, "look");
        a.images = vec![img(1), img(2)];
        let mut b = a.clone();
        b.images.reverse();
        let pa = Prompt { template_id: "t".into(), messages: vec![a] };
        let pb = Prompt { template_id: "t".into(), messages: vec![b] };
        assert_ne!(pa.digest(), pb.digest());
        let mut pc = pa.clone();
        pc.template_id = "u".into();
        assert_ne!(pa.digest(), pc.digest());
        assert_eq!(pa.digest(), pa.clone().digest());
    }

    #[test]
    fn png_round_trip() {
        let png = img(7).to_png().unwrap();
        let back = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(back, img(7).image);
    }
}
