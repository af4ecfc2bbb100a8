//! Sampling probabilities for fixed count vectors, computed independently with 50-digit arithmetic.

pub const SAMPLING_ORACLE: &[(&[f64], f64, &[f64])] = &[
    (&[38.0, 885.0, 2.0, 3415.0, 35.0, 1176.0], 0.1, &[0.1411575005277218, 0.19338372752476174, 0.10515467842987039, 0.22134242864000936, 0.14000140834495473, 0.19896025653268198]),
    (&[38.0, 885.0, 2.0, 3415.0, 35.0, 1176.0], 0.3, &[0.08608811577124136, 0.22135590129282834, 0.03558910956451133, 0.33191382015763715, 0.08399018478573793, 0.24106286842804392]),
    (&[38.0, 885.0, 2.0, 3415.0, 35.0, 1176.0], 1.0, &[0.006845613402990452, 0.159430733201225, 0.0003602954422626554, 0.615204467663484, 0.006305170239596469, 0.21185372005044137]),
    (&[447213.0, 48.0, 884.0, 1539169.0, 136.0], 0.1, &[0.2845789363387138, 0.11409731738804596, 0.15268505727706042, 0.32201784597027727, 0.12662084302590254]),
    (&[447213.0, 48.0, 884.0, 1539169.0, 136.0], 0.3, &[0.3628631093195292, 0.023386264808953477, 0.056043360825220226, 0.5257440715202265, 0.031963193526070584]),
    (&[447213.0, 48.0, 884.0, 1539169.0, 136.0], 1.0, &[0.2250184910312209, 2.415155098241465e-05, 0.0004447910639261365, 0.7744441369594204, 6.842939445017485e-05]),
    (&[1090.0, 620782.0, 500689.0, 1314658.0], 0.1, &[0.14782025286438596, 0.2787951424621778, 0.27286516534469, 0.3005194393287462]),
    (&[1090.0, 620782.0, 500689.0, 1314658.0], 0.3, &[0.04463994328250042, 0.29948661659408, 0.2807799548107861, 0.3750934853126335]),
    (&[1090.0, 620782.0, 500689.0, 1314658.0], 1.0, &[0.00044723104489173933, 0.2547091582660401, 0.20543455471174318, 0.539409055977325]),
    (&[1553007.0, 31.0, 1982497.0, 18.0, 1111.0, 49.0], 0.1, &[0.2837750582010501, 0.09615968886964928, 0.2907891071413953, 0.09107184409459641, 0.13753976753790745, 0.10066453415540154]),
    (&[1553007.0, 31.0, 1982497.0, 18.0, 1111.0, 49.0], 0.3, &[0.4335651306821281, 0.016869834854527126, 0.4665155073488386, 0.014331250080402093, 0.049364704388157835, 0.019353572645946244]),
    (&[1553007.0, 31.0, 1982497.0, 18.0, 1111.0, 49.0], 1.0, &[0.4391102699031558, 8.765200908301012e-06, 0.5605478872614205, 5.089471495142523e-06, 0.00031413349061685245, 1.3854672403443536e-05]),
    (&[23.0, 1854.0, 11.0], 0.1, &[0.2873572338449181, 0.4457181546391555, 0.2669246115159264]),
    (&[23.0, 1854.0, 11.0], 0.3, &[0.18072529000245754, 0.6744247481811527, 0.14484996181638973]),
    (&[23.0, 1854.0, 11.0], 1.0, &[0.012182203389830509, 0.9819915254237288, 0.005826271186440678]),
    (&[13.0, 18.0, 699425.0, 6.0, 24965.0, 1573914.0], 0.1, &[0.08862100460253428, 0.09155236849323649, 0.2634004113024658, 0.08202711906997409, 0.188745015215205, 0.2856540813165844]),
    (&[13.0, 18.0, 699425.0, 6.0, 24965.0, 1573914.0], 0.3, &[0.013830730518553498, 0.015249087812798703, 0.3631486711124671, 0.010967496107103573, 0.13361695947467483, 0.4631870549744022]),
    (&[13.0, 18.0, 699425.0, 6.0, 24965.0, 1573914.0], 1.0, &[5.6562537934971354e-06, 7.831736021765264e-06, 0.30431733150128726, 2.610578673921755e-06, 0.010862182765742768, 0.6848043871644808]),
    (&[1508757.0, 206189.0, 1822364.0, 28.0, 501.0, 46.0], 0.1, &[0.25142157531960213, 0.20604741131957433, 0.2562147489172717, 0.08457780627960992, 0.11285593052520089, 0.08888252763874105]),
    (&[1508757.0, 206189.0, 1822364.0, 28.0, 501.0, 46.0], 0.3, &[0.3595311090792927, 0.19789295462252762, 0.3804882268684899, 0.0136866794027612, 0.03251636596503505, 0.01588466406189358]),
    (&[1508757.0, 206189.0, 1822364.0, 28.0, 501.0, 46.0], 1.0, &[0.4264573325588593, 0.05828030023587539, 0.5150998407240484, 7.914332998387454e-06, 0.00014161002972114695, 1.3002118497350819e-05]),
    (&[4506.0, 1841419.0, 38.0, 965009.0, 29.0, 38.0], 0.1, &[0.15676138523752384, 0.28600606036200427, 0.09723851850106752, 0.26811006018513756, 0.09464545721319927, 0.09723851850106752]),
    (&[4506.0, 1841419.0, 38.0, 965009.0, 29.0, 38.0], 0.3, &[0.07828772055543641, 0.47544696341504694, 0.018684925517629264, 0.3916658453034449, 0.01722961969081324, 0.018684925517629264]),
    (&[4506.0, 1841419.0, 38.0, 965009.0, 29.0, 38.0], 1.0, &[0.0016029660207489116, 0.6550670410478119, 1.3518133330772003e-05, 0.3432926401946042, 1.0316470173483898e-05, 1.3518133330772003e-05]),
    (&[1543.0, 46.0, 4.0, 3228.0, 2547.0, 19.0, 28.0], 0.1, &[0.17553138043043287, 0.12353612052667265, 0.0967663087571037, 0.188978121763884, 0.18455298338173512, 0.11308201427222155, 0.11755307086795011]),
    (&[1543.0, 46.0, 4.0, 3228.0, 2547.0, 19.0, 28.0], 0.3, &[0.2225199909522022, 0.07756871648166397, 0.03728011584241596, 0.27767661957229095, 0.2586234728925921, 0.059495666774931476, 0.06683541748390334]),
    (&[1543.0, 46.0, 4.0, 3228.0, 2547.0, 19.0, 28.0], 1.0, &[0.20809170600134863, 0.006203641267700607, 0.0005394470667565745, 0.43533378287255564, 0.3434929197572488, 0.002562373567093729, 0.003776129467296022]),
    (&[27.0, 3449.0, 40.0], 0.1, &[0.2729062238303428, 0.44324759026039723, 0.28384618590926]),
    (&[27.0, 3449.0, 40.0], 0.3, &[0.15601517365893364, 0.6684449827764937, 0.1755398435645727]),
    (&[27.0, 3449.0, 40.0], 1.0, &[0.007679180887372013, 0.9809442548350398, 0.011376564277588168]),
    (&[1726527.0, 31.0, 1696583.0, 622.0, 5.0], 0.1, &[0.32621579840009685, 0.10937644955601011, 0.32564556170051173, 0.14762730473673824, 0.09113488560664303]),
    (&[1726527.0, 31.0, 1696583.0, 622.0, 5.0], 0.3, &[0.4657788472585244, 0.01755643195349036, 0.4633405210436583, 0.04316829191582088, 0.01015590782850603]),
    (&[1726527.0, 31.0, 1696583.0, 622.0, 5.0], 1.0, &[0.5042768668905137, 9.05435181355746e-06, 0.495530947190347, 0.00018167118800105616, 1.4603793247673324e-06]),
    (&[1455937.0, 391167.0, 9.0], 0.1, &[0.45909041400866946, 0.40255033023040276, 0.1383592557609278]),
    (&[1455937.0, 391167.0, 9.0], 0.3, &[0.5877035985513562, 0.3962089100439312, 0.01608749140471258]),
    (&[1455937.0, 391167.0, 9.0], 1.0, &[0.788223026961534, 0.2117721005699164, 4.872468549568976e-06]),
    (&[554917.0, 1304882.0, 354362.0, 699174.0, 3186.0, 1038189.0, 1249857.0], 0.1, &[0.14673698511137456, 0.1598357461561326, 0.1403012379887692, 0.15016728046467778, 0.08758734579705815, 0.156222804894821, 0.15914859958716673]),
    (&[554917.0, 1304882.0, 354362.0, 699174.0, 3186.0, 1038189.0, 1249857.0], 0.3, &[0.14422639572453463, 0.1864007749810431, 0.12606963190276954, 0.15457950865473144, 0.03067256341134456, 0.17404408514493316, 0.18400704018064357]),
    (&[554917.0, 1304882.0, 354362.0, 699174.0, 3186.0, 1038189.0, 1249857.0], 1.0, &[0.10662116560320964, 0.25071864768000873, 0.06808673997279698, 0.13433855304389394, 0.0006121546710802263, 0.19947653666481766, 0.24014620236419285]),
    (&[1435268.0, 539.0], 0.1, &[0.6875552760877904, 0.3124447239122095]),
    (&[1435268.0, 539.0], 0.3, &[0.9142089112858547, 0.08579108871414531]),
    (&[1435268.0, 539.0], 1.0, &[0.999624601356589, 0.00037539864341098767]),
    (&[2175.0, 3446.0, 1961.0, 22.0], 0.1, &[0.27259330066780385, 0.2854307636645859, 0.26978451062429926, 0.172191425043311]),
    (&[2175.0, 3446.0, 1961.0, 22.0], 0.3, &[0.296780261632449, 0.3407154417428993, 0.2877004313755485, 0.07480386524910311]),
    (&[2175.0, 3446.0, 1961.0, 22.0], 1.0, &[0.28603366649132034, 0.45318253550762755, 0.25789058390320885, 0.0028932140978432403]),
    (&[4.0, 18.0, 736350.0, 13.0, 24.0], 0.1, &[0.1274714395756775, 0.1481610823064899, 0.42846496934746, 0.14341719578745693, 0.15248531298291573]),
    (&[4.0, 18.0, 736350.0, 13.0, 24.0], 0.3, &[0.022892717688406873, 0.03594687212581395, 0.869369985933684, 0.032603360113104884, 0.039187064138990306]),
    (&[4.0, 18.0, 736350.0, 13.0, 24.0], 1.0, &[5.431764141937429e-06, 2.4442938638718428e-05, 0.9999198814789064, 1.7653233461296643e-05, 3.259058485162457e-05]),
    (&[1769269.0, 1862134.0, 11.0, 1741038.0, 1441.0], 0.1, &[0.2634297687637727, 0.2647808407404531, 0.07943734716957472, 0.2630063831104158, 0.12934566021578361]),
    (&[1769269.0, 1862134.0, 11.0, 1741038.0, 1441.0], 0.3, &[0.3168118532368245, 0.3217114665590056, 0.00868722494282298, 0.3152867621728032, 0.03750269308854374]),
    (&[1769269.0, 1862134.0, 11.0, 1741038.0, 1441.0], 1.0, &[0.32923413249947475, 0.3465149008363211, 2.0469332009401752e-06, 0.32398077148168003, 0.0002681482493231629]),
    (&[3462.0, 2982.0], 0.1, &[0.5037312367456334, 0.49626876325436664]),
    (&[3462.0, 2982.0], 0.3, &[0.5111920482184295, 0.4888079517815706]),
    (&[3462.0, 2982.0], 1.0, &[0.537243947858473, 0.462756052141527]),
    (&[18.0, 17.0, 61.0, 1156149.0, 1234994.0, 1242579.0], 0.1, &[0.08168570237549944, 0.08122013168902753, 0.09228939110745195, 0.24712698911993225, 0.24876271149268442, 0.24891507421540443]),
    (&[18.0, 17.0, 61.0, 1156149.0, 1234994.0, 1242579.0], 0.3, &[0.011408498060249456, 0.011214538281814842, 0.016453021751790597, 0.3159009003770696, 0.3222153127206478, 0.32280772880842773]),
    (&[18.0, 17.0, 61.0, 1156149.0, 1234994.0, 1242579.0], 1.0, &[4.953467675045916e-06, 4.678275026432254e-06, 1.678675156543338e-05, 0.3181637055020367, 0.3398612698819809, 0.3419486061217155]),
    (&[3707.0, 47.0, 953207.0], 0.1, &[0.2951607374249983, 0.19070677146288573, 0.514132491112116]),
    (&[3707.0, 47.0, 953207.0], 0.3, &[0.1525604356418533, 0.041149494239865, 0.8062900701182817]),
    (&[3707.0, 47.0, 953207.0], 1.0, &[0.003873721081632376, 4.911380923569508e-05, 0.9960771651091319]),
];
