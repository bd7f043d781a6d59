//! A small shell tokenizer: enough grammar to split command lines into
//! segments, strip quoting, and spot redirections and substitutions.
//! It does not expand anything.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum RedirectKind {
    /// `>`, `>>`, `>|`, `&>`, `2>` ... writing to a file.
    Output,
    /// `<`, reading from a file.
    Input,
    /// `<<`, `<<<`: inline data.
    HereDoc,
    /// `2>&1`, `>&2`: duplicating a descriptor.
    DupFd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Redirect {
    pub kind: RedirectKind,
    pub op: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct RawSegment {
    pub words: Vec<String>,
    pub redirects: Vec<Redirect>,
    /// `$( )`, backticks or process substitution appeared in this segment.
    pub substitution: bool,
}

impl RawSegment {
    fn is_empty(&self) -> bool {
        self.words.is_empty() && self.redirects.is_empty() && !self.substitution
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LexError(pub String);

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    segments: Vec<RawSegment>,
    current: RawSegment,
    word: String,
    /// A word has started, even if it is empty (`''`).
    in_word: bool,
    pending_redirect: Option<(RedirectKind, String)>,
}

pub(crate) fn split_segments(command: &str) -> Result<Vec<RawSegment>, LexError> {
    let mut lx = Lexer {
        chars: command.chars().peekable(),
        segments: Vec::new(),
        current: RawSegment::default(),
        word: String::new(),
        in_word: false,
        pending_redirect: None,
    };
    lx.run()?;
    Ok(lx.segments)
}

impl Lexer<'_> {
    fn run(&mut self) -> Result<(), LexError> {
        while let Some(c) = self.chars.next() {
            match c {
                ' ' | '\t' => self.end_word(),
                '\n' | ';' | '(' | ')' => self.end_segment(),
                '&' => {
                    if self.chars.peek() == Some(&'&') {
                        self.chars.next();
                        self.end_segment();
                    } else if self.chars.peek() == Some(&'>') {
                        self.chars.next();
                        let op = if self.chars.peek() == Some(&'>') {
                            self.chars.next();
                            "&>>"
                        } else {
                            "&>"
                        };
                        self.end_word();
                        self.pending_redirect = Some((RedirectKind::Output, op.to_string()));
                    } else {
                        self.end_segment();
                    }
                }
                '|' => {
                    if matches!(self.chars.peek(), Some('|') | Some('&')) {
                        self.chars.next();
                    }
                    self.end_segment();
                }
                '>' | '<' => self.redirect(c)?,
                '\'' => {
                    self.in_word = true;
                    loop {
                        match self.chars.next() {
                            Some('\'') => break,
                            Some(ch) => self.word.push(ch),
                            None => return Err(LexError("unterminated single quote".into())),
                        }
                    }
                }
                '"' => {
                    self.in_word = true;
                    loop {
                        match self.chars.next() {
                            Some('"') => break,
                            Some('\\') => match self.chars.next() {
                                Some(ch @ ('"' | '\\' | '$' | '`')) => self.word.push(ch),
                                Some('\n') => {}
                                Some(ch) => {
                                    self.word.push('\\');
                                    self.word.push(ch);
                                }
                                None => return Err(LexError("unterminated double quote".into())),
                            },
                            Some('`') => {
                                self.current.substitution = true;
                                self.skip_backticks()?;
                            }
                            Some('$') if self.chars.peek() == Some(&'(') => {
                                self.chars.next();
                                self.current.substitution = true;
                                self.skip_parens()?;
                            }
                            Some(ch) => self.word.push(ch),
                            None => return Err(LexError("unterminated double quote".into())),
                        }
                    }
                }
                '\\' => match self.chars.next() {
                    Some('\n') => {}
                    Some(ch) => {
                        self.in_word = true;
                        self.word.push(ch);
                    }
                    None => return Err(LexError("dangling backslash".into())),
                },
                '`' => {
                    self.in_word = true;
                    self.current.substitution = true;
                    self.skip_backticks()?;
                }
                '$' if self.chars.peek() == Some(&'(') => {
                    self.chars.next();
                    self.in_word = true;
                    self.current.substitution = true;
                    self.skip_parens()?;
                }
                '#' if !self.in_word => {
                    // comment to end of line
                    for ch in self.chars.by_ref() {
                        if ch == '\n' {
                            break;
                        }
                    }
                    self.end_segment();
                }
                ch => {
                    self.in_word = true;
                    self.word.push(ch);
                }
            }
        }
        if self.pending_redirect.is_some() && !self.in_word {
            return Err(LexError("redirection without a target".into()));
        }
        self.end_segment();
        Ok(())
    }

    fn redirect(&mut self, c: char) -> Result<(), LexError> {
        // `2>` and friends: an all-digit word right before the operator is a descriptor
        let fd_prefix = self.in_word && !self.word.is_empty() && self.word.chars().all(|d| d.is_ascii_digit());
        let mut op = String::new();
        if fd_prefix {
            op.push_str(&self.word);
            self.word.clear();
            self.in_word = false;
        } else {
            self.end_word();
        }
        op.push(c);
        let mut kind = if c == '>' { RedirectKind::Output } else { RedirectKind::Input };
        match (c, self.chars.peek().copied()) {
            ('>', Some('>')) | ('>', Some('|')) => {
                op.push(self.chars.next().unwrap());
            }
            ('<', Some('<')) => {
                op.push(self.chars.next().unwrap());
                if self.chars.peek() == Some(&'<') {
                    op.push(self.chars.next().unwrap());
                }
                kind = RedirectKind::HereDoc;
            }
            ('<', Some('(')) | ('>', Some('(')) => {
                // process substitution
                self.chars.next();
                self.current.substitution = true;
                self.skip_parens()?;
                return Ok(());
            }
            _ => {}
        }
        if self.chars.peek() == Some(&'&') {
            op.push(self.chars.next().unwrap());
            kind = RedirectKind::DupFd;
        }
        self.pending_redirect = Some((kind, op));
        Ok(())
    }

    fn skip_backticks(&mut self) -> Result<(), LexError> {
        loop {
            match self.chars.next() {
                Some('`') => return Ok(()),
                Some('\\') => {
                    self.chars.next();
                }
                Some(_) => {}
                None => return Err(LexError("unterminated backtick substitution".into())),
            }
        }
    }

    fn skip_parens(&mut self) -> Result<(), LexError> {
        let mut depth = 1usize;
        let mut quote: Option<char> = None;
        while let Some(ch) = self.chars.next() {
            match (quote, ch) {
                (Some(q), c) if c == q => quote = None,
                (Some('"'), '\\') => {
                    self.chars.next();
                }
                (Some(_), _) => {}
                (None, '\'' | '"') => quote = Some(ch),
                (None, '\\') => {
                    self.chars.next();
                }
                (None, '(') => depth += 1,
                (None, ')') => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(());
                    }
                }
                _ => {}
            }
        }
        Err(LexError("unterminated command substitution".into()))
    }

    fn end_word(&mut self) {
        if !self.in_word {
            return;
        }
        let word = std::mem::take(&mut self.word);
        self.in_word = false;
        match self.pending_redirect.take() {
            Some((kind, op)) => self.current.redirects.push(Redirect { kind, op, target: word }),
            None => self.current.words.push(word),
        }
    }

    fn end_segment(&mut self) {
        self.end_word();
        // an operator right after a redirection leaves it without target; keep it visible
        if let Some((kind, op)) = self.pending_redirect.take() {
            self.current.redirects.push(Redirect {
                kind,
                op,
                target: String::new(),
            });
        }
        let seg = std::mem::take(&mut self.current);
        if !seg.is_empty() {
            self.segments.push(seg);
        }
    }
}
