#!/usr/bin/env python3
"""Regenerates data/lexicon.tsv from the word lists below.

Unknown alphabetic words are tagged NOUN by the chunker, so this table mostly
needs to name the words that are NOT nouns: determiners, adjectives, number
words, and function words / verb forms (OTHER). Words that are commonly nouns
as well (e.g. "building", "painting", "walk") are left out on purpose.
"""

import pathlib
import sys

DET = """
a an the this that these those some several each every his her its their our my your
another any no all both either neither much many few more most such what which whose
"""

NUM = """
one two three four five six seven eight nine ten eleven twelve thirteen fourteen
fifteen sixteen seventeen eighteen nineteen twenty thirty forty fifty sixty seventy
eighty ninety hundred thousand dozen
"""

ADJ = """
big small large little tiny huge giant enormous massive tall short long wide narrow
thick thin fat slim skinny heavy light bright dark dim pale deep shallow high low
old new young ancient modern antique vintage fresh stale hot cold warm cool wet dry
clean dirty full empty open closed soft hard rough smooth sharp blunt loud quiet
fast slow quick rapid strong weak rich poor cheap expensive happy sad angry calm
beautiful ugly pretty handsome cute lovely nice fine good bad great poor best worst
early late near far close distant busy crowded lonely simple complex plain fancy
straight curly crooked round square flat steep tight loose thick thin hollow solid
sunny cloudy rainy snowy foggy windy stormy misty hazy clear colorful colourful
red blue green yellow orange purple pink brown black white gray grey golden silver
beige tan maroon navy teal turquoise violet cyan magenta crimson scarlet ivory cream
wooden metal metallic plastic glass leather cotton woolen wool silk rubber paper
ceramic stone concrete brick marble steel iron copper bronze denim velvet linen
striped dotted spotted checkered plaid floral patterned printed painted polished
shiny glossy matte dull dusty rusty muddy sandy grassy rocky snowy icy frozen melted
furry fluffy hairy feathered woolly scaly spiky wrinkled smooth silky
sleepy tired awake alive dead sick healthy hungry thirsty fit strong lazy active
wild domestic tame friendly fierce gentle shy brave proud curious funny serious
delicious tasty sweet sour bitter salty spicy savory juicy crispy crunchy creamy
raw cooked baked fried grilled roasted boiled steamed sliced chopped whole ripe
rotten organic natural artificial fake real original
urban rural tropical arctic coastal rustic industrial residential suburban
indoor outdoor inner outer upper lower middle central front back rear top bottom
left right main single double triple multiple various different similar same other
entire whole partial broken cracked damaged torn worn new used vacant
elegant stylish casual formal classic classical traditional contemporary minimalist
luxurious luxury cozy comfortable uncomfortable spacious cramped tidy messy neat
quiet noisy peaceful chaotic colorful monochrome transparent opaque translucent
reflective sparkling glowing glittering blurry blurred sharp detailed abstract
realistic cartoon digital graphic vector illustrated animated
male female adult baby elderly teenage
strange weird unusual rare common typical ordinary special famous popular unknown
important main major minor tiny mini miniature oversized compact portable
electric electronic mechanical automatic manual wireless solar nuclear
american british french italian german spanish chinese japanese indian mexican
african european asian russian korean greek irish dutch swedish thai vietnamese
christmas halloween festive seasonal summer winter autumn spring
morning evening nighttime daytime
happy joyful cheerful excited smiling laughing crying
giant dwarf fat lean muscular
vertical horizontal diagonal parallel circular rectangular triangular oval
hexagonal cylindrical spherical curved bent twisted folded rolled stacked
upside nearby overhead underwater underground outdoor inside outside
light lightweight dense sparse thick bare naked barefoot
""" + """
bigger smaller larger taller shorter longer wider narrower thicker thinner fatter
heavier lighter brighter darker dimmer deeper shallower higher lower older newer
younger fresher hotter colder warmer cooler wetter drier cleaner dirtier fuller
emptier softer harder rougher smoother sharper louder quieter faster slower stronger
weaker richer poorer cheaper happier sadder calmer prettier uglier nicer closer
farther busier simpler plainer straighter flatter tighter looser sunnier cloudier
biggest smallest largest tallest shortest longest widest oldest newest youngest
"""

OTHER = """
and or but nor so yet if then than because while when where whereas although though
of in on at by for with without within into onto from to toward towards through
across along around about above below under underneath beneath over behind beside
besides between among amid against near next inside outside upon off out up down past
via per during before after since until till except like unlike throughout beyond
is are was were be been being am has have had having do does did doing done
will would shall should can could may might must ought
i me you he him she it we us they them myself yourself himself herself itself
ourselves themselves who whom whoever whatever whichever there here
not very too also just only even still again ever never always often sometimes
usually rarely quite rather really almost nearly well together apart away back
slowly quickly carefully gently loudly quietly happily sadly brightly closely
how why yes
as let lets
sit sits sat stand stands stood lie lies lay lying hold holds held wear wears wore worn
eat eats ate eaten drink drinks drank look looks looked see sees saw seen
make makes made take takes took taken give gives gave given put puts
go goes went gone come comes came get gets got gotten keep keeps kept
show shows showed shown leave leaves left feel feels felt seem seems seemed
become becomes became begin begins began run runs ran fly flies flew flown
swim swims swam ride rides rode ridden drive drives drove driven grow grows grew grown
throw throws threw thrown catch catches caught carry carries carried
"""

# -ing / -ed forms of common verbs (forms that are rarely nouns).
VERBS = """
sit:sitting stand:standing lie:lying run:running walk:walking play:playing
hold:holding wear:wearing eat:eating drink:drinking look:looking watch:watching
ride:riding drive:driving fly:flying swim:swimming jump:jumping climb:climbing
lean:leaning rest:resting sleep:sleeping smile:smiling laugh:laughing cry:crying
talk:talking read:reading write:writing cook:cooking bake:baking cut:cutting
carry:carrying throw:throwing catch:catching kick:kicking hit:hitting
pose:posing stare:staring sing:singing dance:dancing hug:hugging kiss:kissing
grow:growing hang:hanging float:floating fall:falling flow:flowing shine:shining
glow:glowing burn:burning melt:melting pour:pouring fill:filling cover:covering
surround:surrounding face:facing overlook:overlooking feature:featuring
show:showing display:displaying depict:depicting contain:containing
use:using make:making take:taking give:giving put:putting get:getting
go:going come:coming leave:leaving wait:waiting stay:staying move:moving
push:pushing pull:pulling lift:lifting open:opening close:closing
work:working study:studying learn:learning teach:teaching help:helping
shop:shopping sell:selling buy:buying hike:hiking skate:skating ski:skiing
surf:surfing sail:sailing fish:fishing hunt:hunting graze:grazing
bark:barking chase:chasing feed:feeding pet:petting groom:grooming
paint:painted draw:drawn build:built decorate:decorating arrange:arranging
park:parked stack:stacked place:placed scatter:scattered fold:folding
wrap:wrapping tie:tying roll:rolling spin:spinning bounce:bouncing
shake:shaking wave:waving point:pointing reach:reaching touch:touching
splash:splashing dive:diving crawl:crawling stretch:stretching kneel:kneeling
squat:squatting bend:bending turn:turning twist:twisting march:marching
perch:perched nest:nesting roam:roaming wander:wandering explore:exploring
celebrate:celebrating gather:gathering meet:meeting greet:greeting
"""

MORE_VERBS = """
accept add admire agree allow answer appear apply argue arrive ask attach attack avoid
balance bathe battle beg behave believe belong blink blow boil borrow bounce bow breathe
breed bring brush bump calculate call camp care carve cast change charge cheer chew
choose clap clean clear collect comb compare compete complain complete connect consider
continue copy count crash cross crush curl cycle damage decide deliver describe destroy
dig discover discuss dress drag dream drop dry dust earn embrace enjoy enter escape
examine exercise exit expand explain fail fasten fetch fight film finish fit fix flash
flip float follow fry gaze glance glide grab grin grip guard guide handle happen hate
hear heat hide hop hurry imagine improve include inspect install invite jog join juggle
kneel knit knock land last laugh launch lay lead lick light like listen live load lock
love manage mark match measure mend mix mount nap need nod notice obey observe offer
order own pack pass pause peel perform pick pile plan plant pray prefer prepare present
press pretend print protect provide punch race rain raise react realize receive recognize
relax remain remember remove repair repeat replace reply rescue return rise rush sail
scream search serve settle shout shove sign sip ski slide slip smell smoke snap sneeze
sniff snow solve sort speak spill spray spread sprinkle squeeze stare start steal step
stir stop store stroll struggle suck suggest supply support suppose surprise swallow
sweep swing switch talk taste tear tease thank think tickle tip touch tour trace train
transport trap travel treat tremble trip trot trust try type unlock unpack vanish visit
wake want warm warn wash waste weigh whisper whistle wink wipe wish wonder worry yawn yell
zoom
"""

ADVERBS = """
quickly slowly carefully happily sadly quietly loudly gently softly brightly closely
neatly proudly calmly easily freely fully heavily lightly nearly partly perfectly
rapidly simply smoothly strongly suddenly tightly warmly widely wildly badly barely
beautifully boldly briefly cheerfully clearly deeply eagerly evenly finally firmly
gracefully honestly hungrily lazily loosely madly merrily mostly naturally nervously
openly patiently politely poorly randomly rarely really roughly rudely safely seriously
sharply silently sleepily steadily sweetly swiftly tenderly thoroughly truly usually
vastly visibly weakly completely entirely extremely highly mainly especially
"""

MORE_ADJ = """
able absent abundant acidic adorable adventurous afraid aggressive agile alert amazing
ambitious amused ancient angular anxious arid aromatic ashamed asleep athletic attractive
average awful awkward bald barren basic beloved blank bleak blind blond blonde bold bony
bored boring brief brilliant brisk bulky bumpy calm careful careless charming cheap
cheerful chilly chubby clever clumsy coarse colossal comfy crisp cruel cuddly curvy
damp dangerous daring dazzling dear decorative delicate delightful dense dirty dizzy
drowsy dusty eager easy elaborate elderly empty enchanting energetic enormous exotic
faded faint fair faithful famous fantastic fearless feeble festive filthy firm flaky
flexible fluffy fond fragile fragrant frantic free friendly frightened frosty fuzzy
generous gentle gigantic gleaming gloomy glorious gorgeous graceful grand grateful greasy
grim gritty grumpy handy harsh helpful helpless hilarious hollow homemade honest hopeful
horrible huge humble humid icy idle ill immense innocent intense interesting jagged jolly
joyous juvenile keen kind knotty lavish lazy legal lengthy lively livid lone lonely loyal
lucky lush magnificent majestic mature mean mellow mighty mild misty moist mysterious
narrow nasty naughty nervous noble numb obedient odd oily orderly ornate outgoing
outstanding pale peculiar perfect petite plump pointed polite poor precious pure puzzled
quaint radiant ragged rapid rare raw reckless relaxed reliable remote rigid ripe robust
rosy rotten royal rugged rusty sacred safe salty scarce scary scenic scruffy secret
serene shabby shaggy shiny shocked silly sincere sleek slender slick slimy slippery sloppy
smart smoky snug soggy solemn sore sparkling splendid spotless sprawling stark steady
sticky stiff stormy strict stubborn sturdy subtle sudden superb sweaty swift tangled tart
tense terrible thankful thorny thoughtful tidy timid tired tough tranquil tremendous
tricky trim triumphant true ugly unique unlucky unusual upbeat upset useful useless vague
vain valid vast vibrant vicious vigilant vivid wacky wary wavy wealthy weary wicked wide
wise witty wobbly wonderful worried worthy yummy zealous unripe
"""

EXTRA_OTHER_FORMS = """
decorated arranged covered filled surrounded isolated located situated
standing seated lined stacked topped stuffed loaded packed mixed
made called named known shown seen taken used placed set
"""

CONTRACTED = """
s t d ll re ve m
"""


def words(block):
    return [w for w in block.split() if w]


def inflect(base):
    """Regular -ing and -ed forms of a verb."""
    vowels = "aeiou"
    if base.endswith("ie"):
        ing = base[:-2] + "ying"
    elif base.endswith("e") and not base.endswith("ee"):
        ing = base[:-1] + "ing"
    elif (len(base) >= 3 and base[-1] not in vowels + "wxy" and base[-2] in vowels
          and base[-3] not in vowels and len(base) <= 4):
        ing = base + base[-1] + "ing"
    else:
        ing = base + "ing"
    if base.endswith("e"):
        ed = base + "d"
    elif base.endswith("y") and base[-2] not in vowels:
        ed = base[:-1] + "ied"
    elif (len(base) >= 3 and base[-1] not in vowels + "wxy" and base[-2] in vowels
          and base[-3] not in vowels and len(base) <= 4):
        ed = base + base[-1] + "ed"
    else:
        ed = base + "ed"
    return [ing, ed]


def main(out_path):
    table = {}

    def put(word, tag):
        # First assignment wins, so list precedence is DET > NUM > ADJ > OTHER.
        table.setdefault(word.lower(), tag)

    for w in words(DET):
        put(w, "DET")
    for w in words(NUM):
        put(w, "NUM")
    for w in words(ADJ):
        put(w, "ADJ")
    for w in words(MORE_ADJ):
        put(w, "ADJ")
    for w in words(OTHER):
        put(w, "OTHER")
    for w in words(ADVERBS):
        put(w, "OTHER")
    for pair in words(VERBS):
        base, form = pair.split(":")
        put(form, "OTHER")
        if form.endswith("ing"):
            # third person singular and past forms
            past = base + ("d" if base.endswith("e") else "ed")
            put(past, "OTHER")
    for base in words(MORE_VERBS):
        for form in inflect(base):
            put(form, "OTHER")
    for w in words(EXTRA_OTHER_FORMS):
        put(w, "OTHER")
    for w in words(CONTRACTED):
        put(w, "OTHER")

    lines = ["# word\tTAG  (DET ADJ NOUN NUM OTHER); unknown alphabetic words default to NOUN"]
    for word in sorted(table):
        lines.append(f"{word}\t{table[word]}")
    pathlib.Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(table)} entries to {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/lexicon.tsv")
