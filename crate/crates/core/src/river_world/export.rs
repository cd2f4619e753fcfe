//! Netpbm encoders/decoders: binary PPM (P6) for RGB and PGM (P5) for masks.

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

fn decode(bytes: &[u8], magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>), String> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != magic {
        return Err(format!("expected {magic}, found {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(format!("unsupported maxval {max}"));
    }
    i += 1;
    let n = w * h * channels;
    if bytes.len() < i + n {
        return Err("truncated pixel data".into());
    }
    Ok((w, h, bytes[i..i + n].to_vec()))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    decode(bytes, "P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    decode(bytes, "P5", 1)
}
