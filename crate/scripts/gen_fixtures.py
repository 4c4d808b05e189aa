#!/usr/bin/env python3
"""Regenerates the synthetic corpus under data/corpus/.

All content is synthetic and written for testing only; it is not medical
advice. Output is deterministic, so re-running leaves the files unchanged.

    python3 scripts/gen_fixtures.py [--out data/corpus]
"""

import argparse
import json
import random
from pathlib import Path

SEED = 20240611

BASE_QA = [
    ("What is colorectal cancer?",
     "Colorectal cancer is a malignant tumour that starts in the colon or rectum, usually growing slowly from a polyp over several years."),
    ("What are the common symptoms of colorectal cancer?",
     "Common symptoms include a change in bowel habits, blood in stool, abdominal pain, unexplained weight loss and fatigue."),
    ("Who should be screened for colorectal cancer?",
     "Adults at average risk usually start screening at 45; people with a family history or inflammatory bowel disease may start earlier."),
    ("How is a colonoscopy performed?",
     "A flexible camera is passed through the rectum to inspect the whole colon; polyps can be removed during the same procedure."),
    ("How should I prepare for a colonoscopy?",
     "Follow a low-residue diet for a few days, switch to clear liquids the day before and take the bowel preparation exactly as instructed."),
    ("What is an intestinal polyp?",
     "A polyp is a growth on the inner lining of the bowel. Most are benign, but some adenomas can turn into cancer over time."),
    ("Do all polyps need to be removed?",
     "Most polyps found during colonoscopy are removed and examined, because it is hard to tell by sight which ones may become cancerous."),
    ("What stages of colorectal cancer are there?",
     "Staging runs from stage 0 to stage IV depending on how deep the tumour grows, whether lymph nodes are involved and whether it has spread."),
    ("What treatments are available for colorectal cancer?",
     "Treatment may combine surgery, chemotherapy, radiotherapy, targeted therapy and immunotherapy, chosen according to stage and tumour features."),
    ("What happens during colorectal surgery?",
     "The surgeon removes the affected part of the bowel with nearby lymph nodes and reconnects the ends, or creates a stoma when needed."),
    ("What is a stoma and how do I care for it?",
     "A stoma is an opening on the abdomen for stool to leave the body. Keep the skin clean and dry and change the pouch as the nurse showed you."),
    ("What side effects does chemotherapy cause?",
     "Frequent side effects are nausea, fatigue, mouth sores, diarrhoea, numb fingers and a higher risk of infection."),
    ("How can I manage pain after surgery?",
     "Take prescribed pain relief on schedule, move gently as advised and report pain that suddenly worsens or comes with fever."),
    ("What should I eat during treatment?",
     "Small frequent meals with enough protein help; avoid raw or undercooked food when your blood counts are low."),
    ("How often do I need follow-up checks after treatment?",
     "Follow-up usually includes regular blood tests for CEA, CT scans and colonoscopy over the first five years."),
    ("What is the CEA blood test?",
     "CEA is a tumour marker. A rising level after treatment can be an early sign that the cancer has come back."),
    ("Can colorectal cancer be inherited?",
     "A minority of cases come from inherited syndromes such as Lynch syndrome or familial adenomatous polyposis."),
    ("How can I lower my risk of colorectal cancer?",
     "Regular screening, staying active, keeping a healthy weight, eating fibre and limiting red and processed meat lower the risk."),
    ("What is the survival rate for colorectal cancer?",
     "Survival depends strongly on stage; cancers found early have a much better outlook than those that have spread."),
    ("Is blood in the stool always a sign of cancer?",
     "No. Haemorrhoids and fissures are more common causes, but any rectal bleeding should be checked by a doctor."),
    ("How do I prevent infection during chemotherapy?",
     "Wash hands often, avoid crowds when counts are low, keep the port site clean and seek care quickly for a fever."),
    ("Can I exercise during treatment?",
     "Light activity such as walking is usually safe and helps with fatigue; ask your team before starting anything strenuous."),
    ("How do I cope with anxiety after a cancer diagnosis?",
     "Talking with family, joining a support group and asking your team about counselling can all help with worry and low mood."),
    ("What is the difference between colon cancer and rectal cancer?",
     "Both start in the large bowel; rectal cancer sits in the last part and is more often treated with radiotherapy before surgery."),
]

DISEASES = [
    "rectal cancer", "colon cancer", "sigmoid colon cancer", "ascending colon cancer",
    "descending colon cancer", "transverse colon cancer", "anal cancer", "colorectal adenoma",
    "intestinal polyps", "familial adenomatous polyposis", "Lynch syndrome", "hyperplastic polyp",
    "serrated polyp", "ulcerative colitis", "Crohn's disease", "enteritis",
    "irritable bowel syndrome", "diverticulitis", "diverticulosis", "intestinal obstruction",
    "bowel perforation", "haemorrhoids", "anal fissure", "anal fistula",
    "rectal prolapse", "ischaemic colitis", "microscopic colitis", "radiation proctitis",
    "pseudomembranous colitis", "appendicitis", "gastrointestinal bleeding", "iron deficiency anaemia",
    "constipation", "chronic diarrhoea", "lactose intolerance", "coeliac disease",
    "small bowel tumour", "carcinoid tumour", "gastrointestinal stromal tumour", "peritoneal metastasis",
    "liver metastasis", "lung metastasis", "bowel obstruction after surgery", "anastomotic leak",
    "parastomal hernia", "incisional hernia", "stoma prolapse", "short bowel syndrome",
    "chemotherapy neuropathy", "hand-foot syndrome", "neutropenic fever", "mucositis",
    "radiation enteritis", "malnutrition", "cachexia", "deep vein thrombosis",
    "colonic volvulus", "megacolon", "pouchitis", "proctitis",
    "juvenile polyp", "Peutz-Jeghers syndrome", "MUTYH polyposis", "signet ring cell carcinoma",
]

LOOKUP_TEMPLATES = [
    ("What is {d}?", "{D} is a condition of the digestive tract; the synthetic reference entry describes it in plain language."),
    ("What causes {d}?", "Causes of {d} vary and often combine genetic, dietary and inflammatory factors."),
    ("What are the early symptoms of {d}?", "Early signs of {d} may be mild, such as a change in bowel habits or discomfort."),
    ("What are the late symptoms of {d}?", "Later stages of {d} can bring weight loss, fatigue and persistent pain."),
    ("How is {d} diagnosed?", "{D} is usually diagnosed with an examination, blood tests, imaging and sometimes endoscopy."),
    ("Which tests confirm {d}?", "Confirmation of {d} typically relies on endoscopy, biopsy or imaging findings."),
    ("How is {d} treated?", "Treatment of {d} depends on severity and may involve medication, procedures or surgery."),
    ("Does {d} need surgery?", "Surgery for {d} is considered when other treatments are not enough or complications arise."),
    ("Can {d} be cured?", "Many people with {d} do well when it is recognised and treated early."),
    ("Is {d} hereditary?", "Family history plays a role in some cases of {d}; genetic counselling can clarify the risk."),
    ("Who is at risk of {d}?", "Risk of {d} rises with age, family history and some lifestyle factors."),
    ("How can I prevent {d}?", "Healthy diet, activity and timely check-ups reduce the chance of {d}."),
    ("What should I eat with {d}?", "With {d}, balanced meals and adequate fluids are generally advised; follow your dietitian."),
    ("What foods should I avoid with {d}?", "People with {d} are often advised to limit alcohol, processed meat and foods that trigger symptoms."),
    ("Is {d} painful?", "{D} can cause discomfort; pain relief should be discussed with your care team."),
    ("How long does recovery from {d} take?", "Recovery from {d} ranges from weeks to months depending on treatment."),
    ("Can {d} come back?", "{D} can recur in some people, which is why follow-up visits matter."),
    ("What complications can {d} cause?", "Complications of {d} include bleeding, obstruction or infection in some cases."),
    ("Is {d} contagious?", "{D} is not passed from person to person."),
    ("Can children get {d}?", "{D} is uncommon in children but can occur; paediatric specialists manage those cases."),
    ("How common is {d}?", "{D} is seen regularly in digestive clinics; its frequency varies by age group."),
    ("When should I see a doctor about {d}?", "See a doctor about {d} if symptoms persist, worsen or include bleeding."),
    ("What medicines are used for {d}?", "Medicines for {d} are chosen by the specialist according to the type and severity."),
    ("Can {d} affect pregnancy?", "Pregnancy with {d} needs joint care from obstetric and digestive specialists."),
    ("How is {d} monitored?", "Monitoring of {d} uses scheduled visits, blood tests and, when needed, endoscopy."),
    ("What is the prognosis of {d}?", "The outlook for {d} depends on stage at diagnosis and response to treatment."),
    ("Does {d} cause fatigue?", "Fatigue is reported by many people with {d}, especially during treatment."),
    ("Can stress make {d} worse?", "Stress does not cause {d} but can make symptoms feel worse."),
    ("Is exercise safe with {d}?", "Gentle exercise is usually safe with {d}; ask your team about limits."),
    ("What questions should I ask my doctor about {d}?", "Ask about the stage of {d}, treatment options, side effects and follow-up."),
    ("Which specialist treats {d}?", "{D} is managed by gastroenterologists, colorectal surgeons or oncologists depending on the case."),
    ("How does {d} differ from colorectal cancer?", "{D} and colorectal cancer can share symptoms, so tests are needed to tell them apart."),
]

THEMES = [
    ("screening", ["When should I get my first colonoscopy?", "Is a stool test as good as colonoscopy for screening?",
                   "My father had colon cancer, how early should I be screened?", "How often should I repeat screening?"]),
    ("preparation", ["What can I eat the day before my colonoscopy?", "The bowel prep makes me vomit, what should I do?",
                     "Can I take my blood pressure pills before colonoscopy?", "How long does the bowel prep take to work?"]),
    ("polyps", ["They found two polyps, is that cancer?", "What does a tubular adenoma mean?",
                "Will the polyp come back after removal?", "How big does a polyp have to be to worry?"]),
    ("bleeding", ["I see bright red blood when I wipe, is it serious?", "My stool is black, what could it be?",
                  "Is blood in stool always cancer?", "I have blood in stool for two weeks, should I worry?"]),
    ("staging", ["What does stage three colon cancer mean?", "Has my cancer spread if lymph nodes are positive?",
                 "What does T3N1 mean on my report?", "Is stage two curable?"]),
    ("surgery", ["How long is the hospital stay after bowel surgery?", "Will I need a stoma after rectal surgery?",
                 "When can I walk after my operation?", "Is laparoscopic surgery better than open surgery?"]),
    ("chemotherapy", ["How many cycles of chemotherapy will I need?", "My fingers are numb after chemo, is it normal?",
                      "Can I work during chemotherapy?", "What is FOLFOX and what are its side effects?"]),
    ("stoma", ["My stoma skin is red and sore, what should I do?", "Can a stoma be reversed later?",
               "How do I change my stoma bag?", "Can I swim with a stoma?"]),
    ("diet", ["What should I eat after bowel surgery?", "Is fibre good for me after colon cancer?",
              "Can I drink coffee during treatment?", "I have lost weight, how can I gain it back?"]),
    ("pain", ["My belly hurts after surgery, is that normal?", "Which painkiller is safe with chemotherapy?",
              "I have back pain, could it be the cancer?", "The pain wakes me at night, what can I take?"]),
    ("followup", ["How often should I check CEA after surgery?", "My CEA went up slightly, should I worry?",
                  "Do I need a CT scan every year?", "When is my next colonoscopy after treatment?"]),
    ("infection", ["I have a fever during chemo, what should I do?", "My wound is red and leaking, is it infected?",
                   "How do I avoid infection with low white cells?", "Should I get the flu vaccine during chemo?"]),
    ("emotions", ["I cannot sleep since the diagnosis, is that normal?", "How do I tell my children about my cancer?",
                  "I feel anxious before every scan, what can help?", "Is there a support group for colon cancer?"]),
]

FOLLOW_ONS = ["Also, I am 58 years old.", "I forgot to mention I have diabetes.", "Thank you for explaining.",
              "It started about a month ago.", "My doctor did not say much.", "Is there anything else I should know?"]

DOCTOR_LINES = ["Based on what you describe, this needs a proper check.", "Please bring your reports to the clinic.",
                "This is common and usually manageable.", "I recommend discussing it with your treating team.",
                "Let me explain the usual approach.", "You should not stop your medication without advice."]

POST_TOPICS = [
    ("My rectal cancer journey, month three", ["rectal cancer", "chemotherapy"]),
    ("Life after descending colon surgery", ["descending colon", "surgery"]),
    ("Sigmoid tumour found at 41", ["sigmoid", "diagnosis"]),
    ("Ascending colon cancer and my family", ["ascending colon"]),
    ("Polyp removed, waiting for pathology", ["polyp", "colonoscopy"]),
    ("Living with enteritis flares", ["enteritis"]),
    ("Diarrhea during treatment: what helped me", ["diarrhea", "chemotherapy"]),
    ("Blood in stool scare", ["blood in stool", "symptom"]),
    ("First colonoscopy experience", ["colonoscopy", "screening"]),
    ("Choosing a hospital for surgery", ["hospital", "surgery"]),
    ("Immunotherapy week one", ["immunotherapy"]),
    ("My anti-cancer diary, day 100", ["anti-cancer", "diary"]),
    ("Hematochezia and what it turned out to be", ["hematochezia"]),
    ("Intestinal obstruction after surgery", ["intestinal obstruction"]),
    ("Flatulence and bloating after resection", ["flatulence"]),
    ("Walking every day after chemo", []),
    ("Recipes that kept me going", []),
]


def lookup_pairs():
    out = []
    n = 0
    for d in DISEASES:
        for q, a in LOOKUP_TEMPLATES:
            n += 1
            cap = d[0].upper() + d[1:]
            out.append({
                "id": f"lk{n:04d}",
                "question": q.format(d=d),
                "answer": a.format(d=d, D=cap),
                "source": "disease_lookup",
                "disease_tags": [d.lower()],
            })
    return out


def conversation(rng, idx, pairs):
    theme, questions = THEMES[idx % len(THEMES)]
    turns = []
    if rng.random() < 0.3:
        turns.append({"speaker": "doctor", "text": "Hello, how can I help you today?"})
    for _ in range(pairs):
        turns.append({"speaker": "patient", "text": rng.choice(questions)})
        if rng.random() < 0.35:
            turns.append({"speaker": "patient", "text": rng.choice(FOLLOW_ONS)})
        turns.append({"speaker": "doctor", "text": f"About your {theme} question: {rng.choice(DOCTOR_LINES)}"})
        if rng.random() < 0.25:
            turns.append({"speaker": "doctor", "text": rng.choice(DOCTOR_LINES)})
    if rng.random() < 0.2:
        turns.append({"speaker": "patient", "text": "Thanks, doctor."})
    return {"id": f"conv{idx:03d}", "turns": turns}


def conversations(rng):
    # 400 conversations yielding 893 pairs: 93 with three pairs, the rest with two.
    three = set(rng.sample(range(400), 93))
    return [conversation(rng, i, 3 if i in three else 2) for i in range(400)]


def posts(rng):
    out = []
    base_time = 1_700_000_000
    for i in range(60):
        title, tags = POST_TOPICS[i % len(POST_TOPICS)]
        ad = i % 10 == 7
        body = (f"Sharing my experience: {title.lower()}. Synthetic post {i} for testing."
                if not ad else f"Special offer on supplements that cure {title.lower()}! Buy now.")
        out.append({
            "id": f"post{i:03d}",
            "title": title if not ad else f"[Promo] {title}",
            "body": body,
            "tags": tags,
            "likes": rng.randint(0, 500),
            "comments": rng.randint(0, 120),
            "shares": rng.randint(0, 60),
            "collections": rng.randint(0, 200),
            "ad_flag": ad,
            "created_at": base_time + i * 86_400 + rng.randint(0, 3_600),
        })
    return out


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "corpus"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    base = [{"id": f"base{i + 1:02d}", "question": q, "answer": a, "source": "base", "disease_tags": []}
            for i, (q, a) in enumerate(BASE_QA)]
    assert len(base) == 24
    write_jsonl(out / "base_qa.jsonl", base)
    write_jsonl(out / "lookup_qa.jsonl", lookup_pairs())
    write_jsonl(out / "conversations.jsonl", conversations(rng))
    write_jsonl(out / "posts.jsonl", posts(rng))


if __name__ == "__main__":
    main()
