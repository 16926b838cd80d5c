//! Rule-based paraphraser: hand-written rewrites per meaning, expanded with
//! synonym swaps, contraction toggles and conversational openers/closers.

/// Whole-sentence rewrites per meaning key. The first entry is the base.
fn frames(meaning_key: &str) -> &'static [&'static str] {
    match meaning_key {
        "praise_on_track" => &[
            "You are doing well so far.",
            "Up until now, you're doing wonderfully.",
            "So far, so good, you're doing great!",
            "Nice work, that was the right move.",
            "Good job, keep it up.",
            "That step was exactly right.",
            "You are on the right track.",
            "Well done, that was correct.",
            "Everything is going according to plan.",
            "Great, you made the right call.",
        ],
        "wrong_direction" => &[
            "You have gone to the wrong direction.",
            "You seem to be heading away from the right route.",
            "That was the wrong way to go.",
            "You went the wrong way.",
            "That move took you off course.",
            "You are moving away from where you need to be.",
            "That step was in the wrong direction.",
            "Wrong way, that move did not help.",
        ],
        "moved_instead_of_interacting" => &[
            "You moved {direction} when you should have chosen to {action}.",
            "Instead of moving {direction}, you should have chosen to {action}.",
            "Going {direction} was a mistake, you needed to {action}.",
            "You should have decided to {action} rather than go {direction}.",
            "Rather than stepping {direction}, it was time to {action}.",
            "Moving {direction} was not right, the better choice was to {action}.",
        ],
        "wrong_pick" => &[
            "You should not have picked up the {object}.",
            "Picking up the {object} was a mistake.",
            "There was no need to grab the {object}.",
            "The {object} is not what you needed to pick up.",
            "Taking the {object} was the wrong choice.",
            "You did not need to collect the {object}.",
        ],
        "wrong_drop" => &[
            "You should not have put down the {object} there.",
            "Dropping the {object} there was a mistake.",
            "That was the wrong place to set down the {object}.",
            "The {object} should not have been dropped there.",
            "Putting the {object} down there did not help.",
            "You let go of the {object} in the wrong spot.",
        ],
        "wrong_mechanism" => &[
            "That is not how the {bin} bin opens.",
            "The {bin} bin does not open that way.",
            "That will not open the {bin} bin.",
            "You used the wrong method on the {bin} bin.",
            "The {bin} bin needs a different way of opening.",
            "That approach does not work for the {bin} bin.",
        ],
        "useless_interaction" => &[
            "There was no reason to {action} there.",
            "Trying to {action} there did nothing.",
            "It made no sense to {action} at that spot.",
            "You tried to {action} where it had no effect.",
            "Choosing to {action} there was pointless.",
            "Nothing happened when you tried to {action} there.",
        ],
        "turn_back" => &[
            "Turn back.",
            "Make a 180-degree turn right now.",
            "Go back the way you came.",
            "Reverse your last step.",
            "Undo that move and head back.",
            "Retrace your step.",
            "Head back to where you were.",
            "Step back the other way.",
        ],
        "go_toward_target" => &[
            "Head {direction} toward the {target}.",
            "Move {direction} to get closer to the {target}.",
            "The {target} is that way, go {direction}.",
            "Go {direction} to reach the {target}.",
            "Take a step {direction} toward the {target}.",
            "To get to the {target}, move {direction}.",
            "Walk {direction} in the direction of the {target}.",
            "Your next move should be {direction}, toward the {target}.",
        ],
        "target_in_front" => &[
            "The {object} is right in front of you.",
            "You are facing the {object} now.",
            "Look, the {object} is straight ahead.",
            "The {object} is directly ahead of you.",
            "You have found the {object}, it is in front of you.",
        ],
        "do_pick" => &[
            "Pick up the {object}.",
            "Grab the {object}.",
            "Take the {object}.",
            "Go ahead and pick up the {object}.",
            "Now collect the {object}.",
            "You should pick the {object} up.",
            "It is time to grab the {object}.",
        ],
        "do_drop_on_mat" => &[
            "Drop the {object} on the mat.",
            "Put the {object} down on the mat.",
            "Place the {object} on the mat.",
            "Set the {object} down on the mat now.",
            "Leave the {object} on the mat.",
            "The {object} goes on the mat, drop it.",
        ],
        "do_deposit" => &[
            "Put the {object} in the {bin} bin.",
            "Drop the {object} into the {bin} bin.",
            "Throw the {object} into the {bin} bin.",
            "Place the {object} inside the {bin} bin.",
            "The {object} belongs in the {bin} bin, drop it in.",
            "Toss the {object} into the {bin} bin.",
        ],
        "do_put_down" => &[
            "Put down the {object} you are carrying.",
            "Drop the {object} you are holding.",
            "Set the {object} down for now.",
            "Let go of the {object}.",
            "You need free hands, put the {object} down.",
            "Place the {object} you have on the floor.",
        ],
        "do_pedal" => &[
            "Pedal to open the {bin} bin.",
            "To access the {bin} bin, you'll need to pedal.",
            "Step on the pedal to open the {bin} bin.",
            "Press the pedal of the {bin} bin.",
            "The {bin} bin opens with the foot pedal.",
            "Use the pedal on the {bin} bin.",
            "Push down the pedal to open the {bin} bin.",
        ],
        "do_lift" => &[
            "Lift the lid to open the {bin} bin.",
            "Raise the lid of the {bin} bin.",
            "To open the {bin} bin, lift its lid.",
            "The {bin} bin opens if you lift the lid.",
            "Pull the lid of the {bin} bin upward.",
            "Flip up the lid of the {bin} bin.",
            "Open the {bin} bin by raising its lid.",
        ],
        "do_grasp" => &[
            "Grasp the handle to open the {bin} bin.",
            "Grab the handle of the {bin} bin.",
            "To open the {bin} bin, grasp its handle.",
            "The {bin} bin opens when you grip the handle.",
            "Hold the handle of the {bin} bin to open it.",
            "Take hold of the handle on the {bin} bin.",
            "Pull the handle to open the {bin} bin.",
        ],
        "praise_approach" => &[
            "It's good that you are getting close to the {target} by moving {direction}!",
            "Moving {direction} brought you closer to the {target}, nice!",
            "Good call going {direction}, the {target} is nearer now.",
            "Nice, stepping {direction} got you closer to the {target}.",
            "Great, heading {direction} moved you toward the {target}.",
            "Well done, going {direction} was the way to the {target}.",
        ],
        "praise_choice" => &[
            "You made the right choice to {action}.",
            "Choosing to {action} was smart.",
            "Good decision to {action}.",
            "It was wise to {action}.",
            "Deciding to {action} was correct.",
            "Nice, it was right to {action}.",
        ],
        "too_close_to_enemy" => &[
            "You are getting too close to the {enemy}.",
            "Careful, the {enemy} is right near you.",
            "Watch out, you are too near the {enemy}.",
            "That brought you dangerously close to the {enemy}.",
            "The {enemy} is close, that was risky.",
            "Keep your distance from the {enemy}.",
        ],
        "wrong_move" => &[
            "Choosing to {action} was not the best move.",
            "It was a mistake to {action}.",
            "You should not have decided to {action}.",
            "Deciding to {action} did not help.",
            "Trying to {action} was the wrong call.",
            "It did not pay off to {action}.",
        ],
        "approach_target" => &[
            "Move {direction} to approach the {target}.",
            "Go {direction} to reach the {target}.",
            "Head {direction} toward the {target}.",
            "Step {direction} to get closer to the {target}.",
            "Make your way {direction} to the {target}.",
            "To get to the {target}, go {direction}.",
        ],
        "avoid_enemy" => &[
            "You should go {direction} to avoid the {enemy}.",
            "Move {direction} to stay away from the {enemy}.",
            "Go {direction} and keep clear of the {enemy}.",
            "Step {direction} so the {enemy} cannot catch you.",
            "Head {direction} to dodge the {enemy}.",
            "To escape the {enemy}, move {direction}.",
        ],
        "wait" => &[
            "Stay where you are for now.",
            "Hold your position.",
            "Do not move this turn.",
            "Wait here for a moment.",
            "Stay put for now.",
            "Remain in place.",
        ],
        "no_enemy_nearby" => &[
            "Rest assured, there are no enemies around, so go {direction}.",
            "No enemies are near, move {direction}.",
            "The coast is clear, head {direction}.",
            "It is safe here, go {direction}.",
            "Nothing dangerous is nearby, so step {direction}.",
            "You are safe for now, keep moving {direction}.",
        ],
        _ => &[],
    }
}

/// Phrase-level swaps; each produces one extra form of any frame containing the pattern.
const SWAPS: [(&str, &str); 16] = [
    ("You are", "You're"),
    ("you are", "you're"),
    ("you'll", "you will"),
    ("It's", "It is"),
    ("It is", "It's"),
    ("it is", "it's"),
    ("That is", "That's"),
    ("did not", "didn't"),
    ("does not", "doesn't"),
    ("do not", "don't"),
    ("Do not", "Don't"),
    ("should not", "shouldn't"),
    ("toward", "towards"),
    ("closer", "nearer"),
    ("a mistake", "an error"),
    ("great", "fantastic"),
];

const OPENERS: [&str; 9] = ["", "Okay, ", "Alright, ", "Hey, ", "Listen, ", "Now, ", "Look, ", "Well, ", "So, "];
const CLOSERS: [&str; 5] = ["", " Stay focused.", " Take your time.", " Pay attention.", " Think it through."];

/// Core sentences: each frame followed by its single-swap forms.
fn cores(meaning_key: &str, base: &str) -> Vec<String> {
    let mut frames: Vec<&str> = frames(meaning_key).to_vec();
    if frames.first() != Some(&base) {
        frames.retain(|f| *f != base);
        frames.insert(0, base);
    }
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: String| {
        if !out.contains(&s) {
            out.push(s);
        }
    };
    for f in &frames {
        push(f.to_string());
    }
    for f in &frames {
        for (from, to) in SWAPS {
            // "where you're" is not idiomatic; skip contractions that land there.
            if f.contains(from) && !f.contains(&format!("where {from}")) {
                push(f.replacen(from, to, 1));
            }
        }
    }
    out
}

fn decorate(core: &str, opener: &str, closer: &str) -> String {
    let mut s = String::new();
    if opener.is_empty() {
        s.push_str(core);
    } else {
        s.push_str(opener);
        let mut chars = core.chars();
        if let Some(first) = chars.next() {
            // Keep a leading slot or "I" untouched; lowercase ordinary words.
            if first == '{' || core.starts_with("I ") {
                s.push(first);
            } else {
                s.extend(first.to_lowercase());
            }
            s.push_str(chars.as_str());
        }
    }
    s.push_str(closer);
    s
}

/// Up to `n` distinct paraphrases of `base`, starting with `base` itself.
/// Cores cycle fastest so the first variants cover every rewrite before any
/// gets decorated twice.
pub fn paraphrase(meaning_key: &str, base: &str, n: usize) -> Vec<String> {
    let cores = cores(meaning_key, base);
    let decorations: Vec<(&str, &str)> = CLOSERS
        .iter()
        .flat_map(|c| OPENERS.iter().map(move |o| (*o, *c)))
        .collect();
    let mut out: Vec<String> = Vec::with_capacity(n);
    'outer: for (o, c) in decorations {
        for core in &cores {
            if out.len() >= n {
                break 'outer;
            }
            let s = decorate(core, o, c);
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::pool::{slot_set, Pool};

    #[test]
    fn every_family_has_rewrites_and_keeps_slots() {
        for fam in Pool::templates().families() {
            assert!(frames(&fam.meaning_key).len() >= 5, "{}", fam.meaning_key);
            let want = slot_set(&fam.base).unwrap();
            let vars = paraphrase(&fam.meaning_key, &fam.base, 200);
            assert_eq!(vars.len(), 200, "{}", fam.family_id);
            assert_eq!(vars[0], fam.base);
            for v in vars {
                assert_eq!(slot_set(&v).unwrap(), want, "{v}");
            }
        }
    }

    #[test]
    fn known_paraphrases_are_present() {
        let v = paraphrase("praise_on_track", "You are doing well so far.", 70);
        assert!(v.iter().any(|s| s == "Up until now, you're doing wonderfully."));
        assert!(v.iter().any(|s| s == "So far, so good, you're doing great!"));
        let v = paraphrase("do_pedal", "Pedal to open the {bin} bin.", 70);
        assert!(v.iter().any(|s| s == "To access the {bin} bin, you'll need to pedal."));
    }

    #[test]
    fn decoration_lowercases_only_plain_words() {
        assert_eq!(decorate("Turn back.", "Okay, ", ""), "Okay, turn back.");
        assert_eq!(decorate("{object} here.", "Now, ", " Stay focused."), "Now, {object} here. Stay focused.");
    }

    #[test]
    fn deterministic() {
        assert_eq!(paraphrase("wait", "Stay where you are for now.", 80), paraphrase("wait", "Stay where you are for now.", 80));
    }
}
